//! The four expected and four pathwise long-run average cost criteria.
//!
//! Expected stage costs are computed exactly by forward propagation of the
//! state-action marginals. Stationary policies on finite models get exact
//! values from the Cesàro limit; eventually stationary Markov policies get
//! exact values from their tail; everything else is estimated over a finite
//! horizon and flagged as such.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{induced_chain, limit_of};
use crate::error::{Error, Result};
use crate::mdp::{CountableMdp, FiniteMdp, PROB_TOL};
use crate::policy::{Kernel, MarkovPolicy, Policy};
use crate::scalar::Scalar;

/// Largest `n + j` accepted by [`n_stage_cost`].
pub const HORIZON_CAP: usize = 10_000_000;

/// Smallest horizon accepted by [`avg_cost_markov`].
pub const MIN_MARKOV_HORIZON: usize = 1000;

/// Stage-wise state-action marginals `gamma[n][x][a]` of a trajectory
/// distribution, together with the initial distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSequence<T = f64> {
    pub p0: Vec<T>,
    pub gamma: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> MarginalSequence<T> {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    /// State marginal of stage `n`.
    pub fn state_marginal(&self, n: usize) -> Vec<T> {
        self.gamma[n].iter().map(|r| crate::scalar::sum(r)).collect()
    }

    /// Checks the shape against `mdp`, that stage 0 projects onto `p0`, and
    /// that each stage's state marginal is the image of the previous stage
    /// under `q`. Exact for rationals, `1e-12` for floats.
    pub fn check_consistency(&self, mdp: &FiniteMdp<T>) -> Result<()> {
        let n = mdp.n_states();
        for (stage, g) in self.gamma.iter().enumerate() {
            if g.len() != n || g.iter().enumerate().any(|(x, r)| r.len() != mdp.n_actions(x)) {
                return Err(Error::DimensionMismatch { what: "marginal stage", expected: n, found: g.len() });
            }
            if let Some(v) = g.iter().flatten().find(|v| **v < T::zero()) {
                return Err(Error::InconsistentMarginals { stage, deviation: v.to_f64().abs() });
            }
        }
        let mut expected = self.p0.clone();
        for stage in 0..self.gamma.len() {
            let got = self.state_marginal(stage);
            let dev = expected
                .iter()
                .zip(&got)
                .map(|(a, b)| (a.clone() - b.clone()).abs())
                .fold(T::zero(), |m, d| if d > m { d } else { m });
            if !dev.near_zero(PROB_TOL) {
                return Err(Error::InconsistentMarginals { stage, deviation: dev.to_f64() });
            }
            expected = push_forward(mdp, &self.gamma[stage]);
        }
        Ok(())
    }
}

/// State distribution of the next stage: `d(y) = sum_{x,a} q(y|x,a) gamma(x,a)`.
pub(crate) fn push_forward<T: Scalar>(mdp: &FiniteMdp<T>, gamma: &[Vec<T>]) -> Vec<T> {
    let mut d = vec![T::zero(); mdp.n_states()];
    for (x, row) in gamma.iter().enumerate() {
        for (a, w) in row.iter().enumerate() {
            if w.is_zero() {
                continue;
            }
            for (y, p) in mdp.row(x, a) {
                d[*y] = d[*y].clone() + w.clone() * p.clone();
            }
        }
    }
    d
}

fn split_by_kernel<T: Scalar>(d: &[T], kernel: &Kernel<T>) -> Vec<Vec<T>> {
    d.iter()
        .zip(&kernel.rows)
        .map(|(m, row)| {
            if m.is_zero() {
                vec![T::zero(); row.len()]
            } else {
                row.iter().map(|p| m.clone() * p.clone()).collect()
            }
        })
        .collect()
}

fn check_distribution<T: Scalar>(p0: &[T], n: usize) -> Result<()> {
    if p0.len() != n {
        return Err(Error::DimensionMismatch { what: "initial distribution", expected: n, found: p0.len() });
    }
    if p0.iter().any(|p| *p < T::zero()) {
        return Err(Error::InvalidArgument("initial distribution has a negative entry".into()));
    }
    let dev = crate::scalar::sum(p0) - T::one();
    if !dev.near_zero(PROB_TOL) {
        return Err(Error::InvalidArgument(format!("initial distribution sums to {}", dev + T::one())));
    }
    Ok(())
}

/// Calls `visit(n, gamma_n)` for every stage `n < stages`.
pub(crate) fn for_each_stage<T: Scalar>(
    mdp: &FiniteMdp<T>,
    policy: &Policy<T>,
    p0: &[T],
    stages: usize,
    mut visit: impl FnMut(usize, &[Vec<T>]),
) -> Result<()> {
    let n = mdp.n_states();
    check_distribution(p0, n)?;
    policy.validate(mdp)?;
    if stages == 0 {
        return Ok(());
    }
    if let Policy::History(h) = policy {
        let table_stages = stages.min(h.horizon + 1);
        let table = crate::strategic::strategic_measure(mdp, policy, p0, table_stages - 1)?;
        let mut last = Vec::new();
        for stage in 0..table_stages {
            last = table.stage_marginal(stage, mdp);
            visit(stage, &last);
        }
        if stages > table_stages {
            // Past its horizon a history policy is uniform, hence Markov.
            let uniform = MarkovPolicy::stationary(Kernel::uniform(mdp));
            let d = push_forward(mdp, &last);
            propagate(mdp, &[(d, &uniform)], table_stages, stages - table_stages, |k, g| visit(table_stages + k, g));
        }
        return Ok(());
    }
    // Policies that depend on the initial state are propagated separately
    // for each charged initial state and summed stage by stage.
    let per_initial = matches!(policy, Policy::SemiStationary(_) | Policy::SemiMarkov(_));
    let views: Vec<_> = if per_initial {
        (0..n).filter(|&x| !p0[x].is_zero()).map(|x| (x, policy.markov_view(x).expect("markov view"))).collect()
    } else {
        vec![(0, policy.markov_view(0).expect("markov view"))]
    };
    let starts: Vec<(Vec<T>, &MarkovPolicy<T>)> = views
        .iter()
        .map(|(x, view)| {
            let d = if per_initial {
                let mut d = vec![T::zero(); n];
                d[*x] = p0[*x].clone();
                d
            } else {
                p0.to_vec()
            };
            (d, view.as_ref())
        })
        .collect();
    propagate(mdp, &starts, 0, stages, visit);
    Ok(())
}

/// Lockstep propagation of several (state distribution, Markov policy)
/// pairs, visiting the summed marginals. Policies are read from stage
/// `offset` on. Returns the state distributions after the last stage.
fn propagate<T: Scalar>(
    mdp: &FiniteMdp<T>,
    starts: &[(Vec<T>, &MarkovPolicy<T>)],
    offset: usize,
    stages: usize,
    mut visit: impl FnMut(usize, &[Vec<T>]),
) -> Vec<Vec<T>> {
    let n = mdp.n_states();
    let mut ds: Vec<Vec<T>> = starts.iter().map(|(d, _)| d.clone()).collect();
    for k in 0..stages {
        let mut total: Option<Vec<Vec<T>>> = None;
        for (d, (_, pi)) in ds.iter_mut().zip(starts) {
            let gamma = split_by_kernel(d, pi.kernel_at(offset + k));
            *d = push_forward(mdp, &gamma);
            total = Some(match total {
                None => gamma,
                Some(mut t) => {
                    for (u, v) in t.iter_mut().flatten().zip(gamma.iter().flatten()) {
                        *u = u.clone() + v.clone();
                    }
                    t
                }
            });
        }
        let total = total.unwrap_or_else(|| (0..n).map(|x| vec![T::zero(); mdp.n_actions(x)]).collect());
        visit(k, &total);
    }
    ds
}

/// The full marginal sequence for stages `0..stages`.
pub fn stage_marginals<T: Scalar>(
    mdp: &FiniteMdp<T>,
    policy: &Policy<T>,
    p0: &[T],
    stages: usize,
) -> Result<MarginalSequence<T>> {
    let mut gamma = Vec::with_capacity(stages);
    for_each_stage(mdp, policy, p0, stages, |_, g| gamma.push(g.to_vec()))?;
    Ok(MarginalSequence { p0: p0.to_vec(), gamma })
}

fn expected_cost<T: Scalar>(mdp: &FiniteMdp<T>, gamma: &[Vec<T>]) -> T {
    let mut s = T::zero();
    for (x, row) in gamma.iter().enumerate() {
        for (a, w) in row.iter().enumerate() {
            if !w.is_zero() {
                s = s + w.clone() * mdp.cost(x, a).clone();
            }
        }
    }
    s
}

/// Expected one-stage costs `E[c(x_k, a_k)]` for `k < stages`.
pub fn stage_costs<T: Scalar>(mdp: &FiniteMdp<T>, policy: &Policy<T>, p0: &[T], stages: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(stages);
    for_each_stage(mdp, policy, p0, stages, |_, g| out.push(expected_cost(mdp, g)))?;
    Ok(out)
}

fn point_mass<T: Scalar>(n: usize, x: usize) -> Result<Vec<T>> {
    if x >= n {
        return Err(Error::DimensionMismatch { what: "initial state", expected: n, found: x });
    }
    let mut d = vec![T::zero(); n];
    d[x] = T::one();
    Ok(d)
}

/// `J_{n,j}(pi, x) = E_x[sum_{k<n} c(x_{k+j}, a_{k+j})]`, exactly.
pub fn n_stage_cost<T: Scalar>(mdp: &FiniteMdp<T>, policy: &Policy<T>, x: usize, n: usize, j: usize) -> Result<T> {
    if n == 0 {
        return Err(Error::InvalidArgument("n-stage cost needs n >= 1".into()));
    }
    let total = n.checked_add(j).unwrap_or(usize::MAX);
    if total > HORIZON_CAP {
        return Err(Error::HorizonOverflow { requested: total, cap: HORIZON_CAP });
    }
    let p0 = point_mass(mdp.n_states(), x)?;
    let mut s = T::zero();
    for_each_stage(mdp, policy, &p0, total, |k, g| {
        if k >= j {
            s = s.clone() + expected_cost(mdp, g);
        }
    })?;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Exact,
    Estimated,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Estimated => "estimated",
        }
    }
}

/// Criteria values for one initial state. `j[i]` holds `J^(i+1)`, `jt[i]`
/// the pathwise `J~^(i+1)` when available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub state: usize,
    pub j: [f64; 4],
    pub jt: [Option<f64>; 4],
    pub method: Method,
    /// Error estimate for each `j[i]`; zero for exact rows.
    pub est_error: [f64; 4],
}

impl StateRow {
    fn exact(state: usize, j: f64, jt: Option<f64>) -> Self {
        StateRow { state, j: [j; 4], jt: [jt; 4], method: Method::Exact, est_error: [0.0; 4] }
    }

    /// `J4 <= J2 <= J1 <= J3` (and the same for the pathwise entries), up to
    /// the summed error estimates plus `tol`.
    pub fn ordering_holds(&self, tol: f64) -> bool {
        let e = &self.est_error;
        let le = |a: f64, b: f64, slack: f64| a <= b + slack + tol;
        let expected = le(self.j[3], self.j[1], e[3] + e[1])
            && le(self.j[1], self.j[0], e[1] + e[0])
            && le(self.j[0], self.j[2], e[0] + e[2]);
        let pathwise = match self.jt {
            [Some(a), Some(b), Some(c), Some(d)] => le(d, b, 0.0) && le(b, a, 0.0) && le(a, c, 0.0),
            _ => true,
        };
        expected && pathwise
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Warning {
    /// Estimates moved by more than the tolerance over the last part of the
    /// horizon.
    NonConvergence { state: usize, oscillation: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub rows: Vec<StateRow>,
    pub warnings: Vec<Warning>,
}

impl CriteriaReport {
    /// One row per state: `state,J1..J4,Jt1..Jt4,method,est_error`, where
    /// `est_error` is the largest per-value estimate and missing pathwise
    /// values are left empty.
    pub fn to_csv(&self) -> String {
        let header = ["state", "J1", "J2", "J3", "J4", "Jt1", "Jt2", "Jt3", "Jt4", "method", "est_error"];
        let rows = self.rows.iter().map(|r| {
            let mut cells = vec![r.state.to_string()];
            cells.extend(r.j.iter().map(|v| v.to_string()));
            cells.extend(r.jt.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
            cells.push(r.method.as_str().to_string());
            cells.push(r.est_error.iter().cloned().fold(0.0, f64::max).to_string());
            cells
        });
        crate::report::csv_table(&header, rows)
    }
}

/// `c_mu(x) = sum_a c(x,a) mu(a|x)`.
pub fn policy_costs(mdp: &FiniteMdp<f64>, mu: &Kernel<f64>) -> Vec<f64> {
    (0..mdp.n_states())
        .map(|x| mu.dist(x).iter().enumerate().map(|(a, w)| w * mdp.cost(x, a)).sum())
        .collect()
}

/// Gain `P* c_mu` of a stationary policy.
pub fn stationary_gain(mdp: &FiniteMdp<f64>, mu: &Kernel<f64>) -> Result<Vec<f64>> {
    let chain = induced_chain(mdp, mu)?;
    let (_, limit) = limit_of(&chain)?;
    let c = policy_costs(mdp, mu);
    Ok(crate::linalg::mat_vec(&limit.p_star, &c))
}

/// Pathwise criteria of a stationary policy on a finite model: the sample
/// path average converges almost surely to the gain of the recurrent class
/// the path ends up in, so every pathwise criterion equals the absorption
/// mixture of class gains.
pub fn pathwise_exact(mdp: &FiniteMdp<f64>, mu: &Kernel<f64>) -> Result<Vec<f64>> {
    let chain = induced_chain(mdp, mu)?;
    let (decomp, limit) = limit_of(&chain)?;
    let c = policy_costs(mdp, mu);
    let class_gain: Vec<f64> = decomp
        .recurrent_classes
        .iter()
        .zip(&limit.per_class_stationary)
        .map(|(class, pi)| class.iter().map(|&y| pi[y] * c[y]).sum())
        .collect();
    Ok(limit.absorption.iter().map(|abs| abs.iter().zip(&class_gain).map(|(w, g)| w * g).sum()).collect())
}

/// All eight criteria of a stationary policy, exactly.
pub fn avg_cost_stationary(mdp: &FiniteMdp<f64>, mu: &Kernel<f64>) -> Result<CriteriaReport> {
    let g = stationary_gain(mdp, mu)?;
    let gt = pathwise_exact(mdp, mu)?;
    let rows = g.iter().zip(&gt).enumerate().map(|(x, (a, b))| StateRow::exact(x, *a, Some(*b))).collect();
    Ok(CriteriaReport { rows, warnings: Vec::new() })
}

/// Window lengths used for the offset criteria at horizon `n`.
fn window_schedule(n: usize) -> Vec<usize> {
    let mut w: Vec<usize> = std::iter::successors(Some(1usize << 10), |w| Some(w * 2)).take_while(|w| *w < n).collect();
    if w.is_empty() {
        w.push(n / 2);
    }
    w.push(n);
    w
}

fn extrema(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), v| (hi.max(v), lo.min(v)))
}

/// Estimates from the prefix sums `s` of a cost stream of length `2n`.
fn estimate_from_prefix(s: &[f64], n: usize) -> ([f64; 4], [f64; 4]) {
    let avg = |k: usize| s[k] / k as f64;
    let (j1, j2) = extrema((n / 2..=n).map(avg));
    let (p1, p2) = extrema((n / 4..=n / 2).map(avg));
    let window = |w: usize| extrema((0..=n).map(|j| (s[j + w] - s[j]) / w as f64));
    let schedule = window_schedule(n);
    let last = window(schedule[schedule.len() - 1]);
    let prev = window(schedule[schedule.len() - 2]);
    // With O(1/n) convergence the change against the previous half-range
    // is about the remaining error; the factor 2 covers periodic ripple.
    (
        [j1, j2, last.0, last.1],
        [2.0 * (j1 - p1).abs(), 2.0 * (j2 - p2).abs(), (last.0 - prev.0).abs(), (last.1 - prev.1).abs()],
    )
}

/// Expected criteria of a Markov policy. Exact when the policy is
/// eventually stationary; otherwise estimated from exact stage costs up to
/// stage `2 * horizon`.
pub fn avg_cost_markov(
    mdp: &FiniteMdp<f64>,
    pi: &MarkovPolicy<f64>,
    horizon: usize,
    tol: f64,
) -> Result<CriteriaReport> {
    if horizon < MIN_MARKOV_HORIZON {
        return Err(Error::InvalidArgument(format!("horizon must be at least {}", MIN_MARKOV_HORIZON)));
    }
    pi.validate(mdp)?;
    let n = mdp.n_states();
    if let Some((switch, tail)) = pi.stationary_tail() {
        let tail_report = avg_cost_stationary(mdp, tail)?;
        let policy = Policy::Markov(pi.clone());
        let mut rows = Vec::with_capacity(n);
        for x in 0..n {
            let p0 = point_mass(n, x)?;
            let mut d = p0.clone();
            if switch > 0 {
                let mut last = Vec::new();
                for_each_stage(mdp, &policy, &p0, switch, |_, g| last = g.to_vec())?;
                d = push_forward(mdp, &last);
            }
            let j: f64 = d.iter().zip(&tail_report.rows).map(|(w, r)| w * r.j[0]).sum();
            let jt: f64 = d.iter().zip(&tail_report.rows).map(|(w, r)| w * r.jt[0].unwrap_or(r.j[0])).sum();
            rows.push(StateRow::exact(x, j, Some(jt)));
        }
        return Ok(CriteriaReport { rows, warnings: Vec::new() });
    }
    let policy = Policy::Markov(pi.clone());
    let results: Vec<Result<StateRow>> = (0..n)
        .into_par_iter()
        .map(|x| {
            let costs = stage_costs(mdp, &policy, &point_mass(n, x)?, 2 * horizon)?;
            let mut s = Vec::with_capacity(costs.len() + 1);
            s.push(0.0);
            for c in &costs {
                s.push(s[s.len() - 1] + c);
            }
            let (j, est_error) = estimate_from_prefix(&s, horizon);
            Ok(StateRow { state: x, j, jt: [None; 4], method: Method::Estimated, est_error })
        })
        .collect();
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let warnings = rows
        .iter()
        .filter_map(|r| {
            let osc = r.est_error.iter().cloned().fold(0.0, f64::max);
            (osc > tol).then_some(Warning::NonConvergence { state: r.state, oscillation: osc })
        })
        .collect();
    Ok(CriteriaReport { rows, warnings })
}

/// Draws an index from a probability vector by inversion.
pub(crate) fn sample_index(weights: impl IntoIterator<Item = f64>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.into_iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// A model that can produce the cost stream of one trajectory.
pub trait Simulate: Sync {
    /// Costs `c(x_k, a_k)` for `k < horizon`, started at `x`.
    fn run(&self, x: usize, horizon: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

/// A finite MDP under any supported policy.
pub struct FiniteSim<'a> {
    pub mdp: &'a FiniteMdp<f64>,
    pub policy: &'a Policy<f64>,
}

impl Simulate for FiniteSim<'_> {
    fn run(&self, x: usize, horizon: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let mut past = Vec::new();
        let mut out = Vec::with_capacity(horizon);
        let mut state = x;
        for k in 0..horizon {
            let a = match self.policy {
                Policy::Stationary(kern) => sample_index(kern.dist(state).iter().cloned(), rng),
                Policy::SemiStationary(ks) => sample_index(ks[x].dist(state).iter().cloned(), rng),
                Policy::Markov(p) => sample_index(p.kernel_at(k).dist(state).iter().cloned(), rng),
                Policy::SemiMarkov(ms) => sample_index(ms[x].kernel_at(k).dist(state).iter().cloned(), rng),
                Policy::History(h) => {
                    let a = sample_index(h.decide(&past, state, self.mdp.n_actions(state)), rng);
                    past.push((state, a));
                    a
                }
            };
            out.push(*self.mdp.cost(state, a));
            let next = self.mdp.row(state, a);
            state = next[sample_index(next.iter().map(|(_, p)| *p), rng)].0;
        }
        Ok(out)
    }
}

/// A countable model under a stationary randomized rule over the action
/// list of each state.
pub struct CountableSim<'a> {
    pub model: &'a CountableMdp<f64>,
    pub rule: &'a (dyn Fn(usize) -> Vec<f64> + Sync),
}

impl Simulate for CountableSim<'_> {
    fn run(&self, x: usize, horizon: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(horizon);
        let mut state = x;
        for _ in 0..horizon {
            let a = sample_index((self.rule)(state), rng);
            out.push(self.model.cost(state, a));
            let next = self.model.transition(state, a)?;
            state = next[sample_index(next.iter().map(|(_, p)| *p), rng)].0;
        }
        Ok(out)
    }
}

/// Per-trajectory pathwise quantities and their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub state: usize,
    pub n_traj: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Length of the sliding windows behind the third and fourth estimates.
    pub window: usize,
    /// Means of the per-trajectory estimates of `J~^(1..4)`.
    pub mean: [f64; 4],
    pub stderr: [f64; 4],
    /// Per-trajectory spread between the largest and smallest window
    /// average, averaged over trajectories.
    pub mean_window_spread: f64,
    pub per_trajectory: Vec<[f64; 4]>,
}

impl SimulationReport {
    /// `trajectory,jt1,jt2,jt3,jt4` per trajectory.
    pub fn to_csv(&self) -> String {
        crate::report::csv_table(
            &["trajectory", "jt1", "jt2", "jt3", "jt4"],
            self.per_trajectory.iter().enumerate().map(|(i, v)| {
                let mut row = vec![i.to_string()];
                row.extend(v.iter().map(|x| x.to_string()));
                row
            }),
        )
    }
}

fn pathwise_from_costs(costs: &[f64]) -> [f64; 4] {
    let h = costs.len();
    let mut s = Vec::with_capacity(h + 1);
    s.push(0.0);
    for c in costs {
        s.push(s[s.len() - 1] + c);
    }
    let (hi, lo) = extrema((h.div_ceil(2).max(1)..=h).map(|k| s[k] / k as f64));
    let w = (h / 2).max(1);
    let (whi, wlo) = extrema((0..=h - w).map(|j| (s[j + w] - s[j]) / w as f64));
    [hi, lo, whi, wlo]
}

/// Monte Carlo estimates of the pathwise criteria from `x`. Trajectory `i`
/// uses a ChaCha8 stream seeded with `seed ^ i`; results do not depend on
/// the thread count.
pub fn simulate_pathwise(
    model: &dyn Simulate,
    x: usize,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<SimulationReport> {
    if n_traj == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("simulation needs n_traj >= 1 and horizon >= 1".into()));
    }
    let per: Vec<Result<[f64; 4]>> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
            Ok(pathwise_from_costs(&model.run(x, horizon, &mut rng)?))
        })
        .collect();
    let per_trajectory = per.into_iter().collect::<Result<Vec<_>>>()?;
    let mut mean = [0.0; 4];
    let mut stderr = [0.0; 4];
    for i in 0..4 {
        let m = per_trajectory.iter().map(|v| v[i]).sum::<f64>() / n_traj as f64;
        let var = if n_traj > 1 {
            per_trajectory.iter().map(|v| (v[i] - m).powi(2)).sum::<f64>() / (n_traj - 1) as f64
        } else {
            0.0
        };
        mean[i] = m;
        stderr[i] = (var / n_traj as f64).sqrt();
    }
    let mean_window_spread = per_trajectory.iter().map(|v| v[2] - v[3]).sum::<f64>() / n_traj as f64;
    Ok(SimulationReport {
        state: x,
        n_traj,
        horizon,
        seed,
        window: (horizon / 2).max(1),
        mean,
        stderr,
        mean_window_spread,
        per_trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::countable::AbsorbingChain;
    use crate::gen::{random_kernel, random_mdp, random_rational_kernel, random_rational_mdp};
    use crate::scalar::Rational;
    use num_traits::{One, Zero};
    use proptest::prelude::*;
    use rand::Rng;

    fn rat(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    fn mdp_f64(q: Vec<Vec<Vec<f64>>>, c: Vec<Vec<f64>>) -> FiniteMdp<f64> {
        let counts: Vec<usize> = q.iter().map(|r| r.len()).collect();
        FiniteMdp::new(crate::gen::index_labels(&counts), q, c).unwrap()
    }

    /// Sum over every trajectory of length `j + n` of its probability times
    /// the costs at stages `j..j+n`.
    fn tree_cost(mdp: &FiniteMdp<Rational>, pi: &MarkovPolicy<Rational>, x: usize, n: usize, j: usize) -> Rational {
        fn walk(
            mdp: &FiniteMdp<Rational>,
            pi: &MarkovPolicy<Rational>,
            x: usize,
            stage: usize,
            end: usize,
            from: usize,
            prob: Rational,
        ) -> Rational {
            if stage == end || prob.is_zero() {
                return Rational::zero();
            }
            let mut total = Rational::zero();
            for a in 0..mdp.n_actions(x) {
                let pa = prob.clone() * pi.kernel_at(stage).dist(x)[a].clone();
                if pa.is_zero() {
                    continue;
                }
                if stage >= from {
                    total += pa.clone() * mdp.cost(x, a).clone();
                }
                for y in 0..mdp.n_states() {
                    let p = mdp.prob(x, a, y);
                    total += walk(mdp, pi, y, stage + 1, end, from, pa.clone() * p);
                }
            }
            total
        }
        walk(mdp, pi, x, 0, j + n, j, Rational::one())
    }

    #[test]
    fn unit_cost_gives_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = random_rational_mdp(&mut rng, 4, 2);
        let ones = (0..4).map(|x| vec![Rational::one(); mdp.n_actions(x)]).collect();
        let mdp = mdp.with_costs(ones).unwrap();
        let pi = MarkovPolicy::periodic(
            vec![random_rational_kernel(&mut rng, &mdp)],
            vec![random_rational_kernel(&mut rng, &mdp), random_rational_kernel(&mut rng, &mdp)],
        );
        let policy = Policy::Markov(pi);
        for (n, j) in [(1, 0), (4, 3), (7, 11)] {
            assert_eq!(n_stage_cost(&mdp, &policy, 2, n, j).unwrap(), Rational::from_int(n as i64));
        }
    }

    #[test]
    fn n_stage_cost_rejects_bad_horizons() {
        let mdp = mdp_f64(vec![vec![vec![1.0]]], vec![vec![0.0]]);
        let policy = Policy::Stationary(Kernel::uniform(&mdp));
        assert!(n_stage_cost(&mdp, &policy, 0, 0, 0).is_err());
        assert!(matches!(
            n_stage_cost(&mdp, &policy, 0, HORIZON_CAP, 1),
            Err(Error::HorizonOverflow { .. })
        ));
    }

    #[test]
    fn absorbing_chain_average_is_start_level() {
        let mdp = AbsorbingChain::harmonic_linear().model().truncate(60).unwrap();
        let policy = Policy::Stationary(Kernel::deterministic(&mdp, &vec![0; 61]));
        for k in [1usize, 4, 10] {
            for n in [1usize, 5, 20] {
                let jn = n_stage_cost(&mdp, &policy, k, n, 0).unwrap();
                assert_eq!(jn / Rational::from_int(n as i64), Rational::from_int(k as i64));
            }
        }
    }

    #[test]
    fn n_stage_cost_matches_trajectory_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mdp = random_rational_mdp(&mut rng, 4, 2);
        let pi = MarkovPolicy::eventually_stationary(
            (0..4).map(|_| random_rational_kernel(&mut rng, &mdp)).collect(),
            random_rational_kernel(&mut rng, &mdp),
        );
        let policy = Policy::Markov(pi.clone());
        for x in 0..4 {
            assert_eq!(n_stage_cost(&mdp, &policy, x, 3, 2).unwrap(), tree_cost(&mdp, &pi, x, 3, 2));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn n_stage_cost_matches_tree_on_small_models(
            seed in any::<u64>(),
            n_states in 1usize..=4,
            max_actions in 1usize..=2,
            n in 1usize..=5,
            j_frac in 0usize..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mdp = random_rational_mdp(&mut rng, n_states, max_actions);
            let j = j_frac % (6 - n);
            let pi = MarkovPolicy::eventually_stationary(
                (0..3).map(|_| random_rational_kernel(&mut rng, &mdp)).collect(),
                random_rational_kernel(&mut rng, &mdp),
            );
            let policy = Policy::Markov(pi.clone());
            let x = rng.gen_range(0..n_states);
            prop_assert_eq!(n_stage_cost(&mdp, &policy, x, n, j).unwrap(), tree_cost(&mdp, &pi, x, n, j));
        }

        #[test]
        fn stationary_criteria_coincide(seed in any::<u64>(), n in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mdp = random_mdp(&mut rng, n, 3, 0.4);
            let k = random_kernel(&mut rng, &mdp);
            let rep = avg_cost_stationary(&mdp, &k).unwrap();
            for row in &rep.rows {
                let jt = row.jt.map(|v| v.unwrap());
                for v in row.j.iter().chain(&jt) {
                    prop_assert!((v - row.j[0]).abs() <= 1e-9);
                }
                prop_assert!(row.ordering_holds(0.0));
            }
        }

        #[test]
        fn periodic_estimates_respect_ordering(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mdp = random_mdp(&mut rng, 3, 2, 0.7);
            let pi = MarkovPolicy::periodic(
                vec![random_kernel(&mut rng, &mdp)],
                vec![random_kernel(&mut rng, &mdp), random_kernel(&mut rng, &mdp), random_kernel(&mut rng, &mdp)],
            );
            let rep = avg_cost_markov(&mdp, &pi, 1000, 1e-6).unwrap();
            for row in &rep.rows {
                prop_assert_eq!(row.method, Method::Estimated);
                prop_assert!(row.ordering_holds(1e-9), "{:?}", row);
            }
        }
    }

    #[test]
    fn stationary_textbook_cases() {
        let absorbing = mdp_f64(vec![vec![vec![1.0]]], vec![vec![0.0]]);
        let rep = avg_cost_stationary(&absorbing, &Kernel::uniform(&absorbing)).unwrap();
        assert_eq!(rep.rows[0].j, [0.0; 4]);
        let cycle = mdp_f64(vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]], vec![vec![0.0], vec![1.0]]);
        let rep = avg_cost_stationary(&cycle, &Kernel::uniform(&cycle)).unwrap();
        for row in &rep.rows {
            assert!(row.j.iter().all(|v| (v - 0.5).abs() < 1e-12));
            assert!(row.jt.iter().all(|v| (v.unwrap() - 0.5).abs() < 1e-12));
        }
        let csv = rep.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "state,J1,J2,J3,J4,Jt1,Jt2,Jt3,Jt4,method,est_error");
        assert!(csv.ends_with('\n') && !csv.contains('\r'));
    }

    #[test]
    fn bounded_absorbing_truncation_has_zero_gain() {
        let mdp = AbsorbingChain::harmonic_bounded().model_f64().truncate(50).unwrap();
        let rep = avg_cost_stationary(&mdp, &Kernel::uniform(&mdp)).unwrap();
        for row in &rep.rows {
            assert!(row.j.iter().chain(row.jt.iter().flatten()).all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn pathwise_mixes_class_gains() {
        // State 0 splits 0.3 / 0.7 into absorbing states with costs 0 and 1.
        let mdp = mdp_f64(
            vec![vec![vec![0.0, 0.3, 0.7]], vec![vec![0.0, 1.0, 0.0]], vec![vec![0.0, 0.0, 1.0]]],
            vec![vec![5.0], vec![0.0], vec![1.0]],
        );
        let jt = pathwise_exact(&mdp, &Kernel::uniform(&mdp)).unwrap();
        assert!((jt[0] - 0.7).abs() < 1e-12);
        assert_eq!(jt[1], 0.0);
        assert_eq!(jt[2], 1.0);
    }

    #[test]
    fn unichain_pathwise_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mdp = random_mdp(&mut rng, 5, 2, 1.0);
        let k = random_kernel(&mut rng, &mdp);
        let jt = pathwise_exact(&mdp, &k).unwrap();
        assert!(jt.iter().all(|v| (v - jt[0]).abs() < 1e-10));
    }

    #[test]
    fn markov_stationary_matches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mdp = random_mdp(&mut rng, 5, 3, 0.5);
        let k = random_kernel(&mut rng, &mdp);
        let a = avg_cost_stationary(&mdp, &k).unwrap();
        let b = avg_cost_markov(&mdp, &MarkovPolicy::stationary(k), 1000, 1e-9).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(rb.method, Method::Exact);
            for i in 0..4 {
                assert!((ra.j[i] - rb.j[i]).abs() < 1e-9);
            }
        }
        assert!(avg_cost_markov(&mdp, &MarkovPolicy::stationary(Kernel::uniform(&mdp)), 999, 1e-9).is_err());
    }

    #[test]
    fn alternating_costs_average_one_half() {
        // One state, two self-loop actions with costs 0 and 1, used in turn.
        let mdp = mdp_f64(vec![vec![vec![1.0], vec![1.0]]], vec![vec![0.0, 1.0]]);
        let pi = MarkovPolicy::periodic(vec![], vec![Kernel::deterministic(&mdp, &[0]), Kernel::deterministic(&mdp, &[1])]);
        let n = 1000;
        let rep = avg_cost_markov(&mdp, &pi, n, 1e-9).unwrap();
        let row = &rep.rows[0];
        assert_eq!(row.method, Method::Estimated);
        assert_eq!(row.j[0], 0.5);
        assert!((row.j[1] - 0.5).abs() <= 1.0 / n as f64);
        assert_eq!(row.j[2], 0.5);
        assert!((row.j[3] - 0.5).abs() <= 1.0 / n as f64);
        assert!(row.ordering_holds(0.0));
    }

    #[test]
    fn eventually_stationary_reduces_to_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = random_mdp(&mut rng, 4, 2, 0.5);
        let prefix: Vec<Kernel<f64>> = (0..5).map(|_| random_kernel(&mut rng, &mdp)).collect();
        let tail = random_kernel(&mut rng, &mdp);
        let rep = avg_cost_markov(&mdp, &MarkovPolicy::eventually_stationary(prefix.clone(), tail.clone()), 1000, 1e-9)
            .unwrap();
        let g_tail = stationary_gain(&mdp, &tail).unwrap();
        for x in 0..4 {
            // Stage-5 state distribution by dense products.
            let mut d = vec![0.0; 4];
            d[x] = 1.0;
            for k in &prefix {
                let mut next = vec![0.0; 4];
                for s in 0..4 {
                    for a in 0..mdp.n_actions(s) {
                        for (y, next_y) in next.iter_mut().enumerate() {
                            *next_y += d[s] * k.dist(s)[a] * mdp.prob(s, a, y);
                        }
                    }
                }
                d = next;
            }
            let want: f64 = d.iter().zip(&g_tail).map(|(a, b)| a * b).sum();
            assert_eq!(rep.rows[x].method, Method::Exact);
            assert!((rep.rows[x].j[0] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn marginal_consistency_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = random_rational_mdp(&mut rng, 3, 2);
        let policy = Policy::Stationary(random_rational_kernel(&mut rng, &mdp));
        let p0 = vec![rat(1, 2), rat(1, 4), rat(1, 4)];
        let mut seq = stage_marginals(&mdp, &policy, &p0, 4).unwrap();
        assert!(seq.check_consistency(&mdp).is_ok());
        assert_eq!(seq.state_marginal(0), p0);
        // Move mass between states at stage 2.
        let m = seq.gamma[2][0][0].clone().min(rat(1, 100));
        seq.gamma[2][0][0] -= m.clone();
        seq.gamma[2][1][0] += m;
        if seq.gamma[2][0][0] != seq.gamma[2][1][0] {
            assert!(matches!(seq.check_consistency(&mdp), Err(Error::InconsistentMarginals { .. })));
        }
    }

    #[test]
    fn constant_cost_simulates_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mdp = random_mdp(&mut rng, 4, 2, 0.6);
        let sevens = (0..4).map(|x| vec![7.0; mdp.n_actions(x)]).collect();
        let mdp = mdp.with_costs(sevens).unwrap();
        let policy = Policy::Stationary(random_kernel(&mut rng, &mdp));
        let rep = simulate_pathwise(&FiniteSim { mdp: &mdp, policy: &policy }, 1, 20, 100, 0).unwrap();
        assert_eq!(rep.mean, [7.0; 4]);
        assert_eq!(rep.stderr, [0.0; 4]);
    }

    #[test]
    fn simulation_is_deterministic_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mdp = random_mdp(&mut rng, 5, 2, 0.5);
        let k = random_kernel(&mut rng, &mdp);
        let policy = Policy::Stationary(k.clone());
        let sim = FiniteSim { mdp: &mdp, policy: &policy };
        let a = simulate_pathwise(&sim, 0, 200, 2000, 42).unwrap();
        let b = simulate_pathwise(&sim, 0, 200, 2000, 42).unwrap();
        assert_eq!(a, b);
        let exact = pathwise_exact(&mdp, &k).unwrap()[0];
        for i in 0..2 {
            // Finite-horizon bias is O(1/horizon) on a finite chain.
            assert!((a.mean[i] - exact).abs() <= 3.0 * a.stderr[i] + 0.05, "{} vs {}", a.mean[i], exact);
        }
        assert!(simulate_pathwise(&sim, 0, 0, 10, 0).is_err());
    }

    #[test]
    fn absorbing_chain_simulation_near_zero() {
        let model = AbsorbingChain::harmonic_bounded().model_f64();
        let rule = |_k: usize| vec![1.0];
        let sim = CountableSim { model: &model, rule: &rule };
        let horizon = 100_000;
        let rep = simulate_pathwise(&sim, 5, 200, horizon, 0).unwrap();
        // Each estimate is at most the cost collected up to the horizon over
        // horizon/2, whose expectation is twice the survival partial sum.
        let bias = 2.0 * crate::countable::hitting_partial_sum(5, horizon as u64) / horizon as f64;
        for i in 0..4 {
            assert!(rep.mean[i] >= 0.0);
            assert!(rep.mean[i] <= 3.0 * rep.stderr[i] + bias, "{:?} {:?}", rep.mean, rep.stderr);
        }
    }

    #[test]
    fn history_policy_marginals_match_strategic_measure() {
        let q = vec![
            vec![vec![rat(1, 2), rat(1, 2)], vec![rat(0, 1), rat(1, 1)]],
            vec![vec![rat(1, 4), rat(3, 4)], vec![rat(1, 1), rat(0, 1)]],
        ];
        let c = vec![vec![rat(1, 1), rat(2, 1)], vec![rat(0, 1), rat(5, 1)]];
        let mdp = FiniteMdp::new(crate::gen::index_labels(&[2, 2]), q, c).unwrap();
        // Repeat the first action forever.
        let h = crate::policy::HistoryPolicy::new(3, |past: &[(usize, usize)], _x| {
            let mut d = vec![Rational::zero(); 2];
            d[past.first().map(|p| p.1).unwrap_or(0)] = Rational::one();
            d
        });
        let policy = Policy::History(h);
        let p0 = vec![rat(1, 3), rat(2, 3)];
        let seq = stage_marginals(&mdp, &policy, &p0, 6).unwrap();
        assert!(seq.check_consistency(&mdp).is_ok());
        let table = crate::strategic::strategic_measure(&mdp, &policy, &p0, 3).unwrap();
        for n in 0..4 {
            assert_eq!(seq.gamma[n], table.stage_marginal(n, &mdp));
        }
    }
}
