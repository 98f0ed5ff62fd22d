//! Optimal average costs of finite MDPs and the structural checks around
//! them: the gain inequality, the submartingale property along a policy,
//! maximal reachability, the reachability condition behind constancy of the
//! optimal gain, and connected classes.
//!
//! The gain computed here is the optimal `J^(1)`; on finite models it equals
//! the optimal `J^(3)` as well.

use std::collections::{HashSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{induced_chain, limit_of, strongly_connected};
use crate::criteria::{for_each_stage, policy_costs};
use crate::error::{Error, Result};
use crate::linalg::{identity, mat_vec, solve};
use crate::mdp::FiniteMdp;
use crate::policy::{Kernel, Policy};

/// Largest number of deterministic policies [`optimal_gain_enum`] visits.
pub const ENUMERATION_CAP: usize = 1_000_000;

/// Tolerance of every verdict in this module.
pub const VERDICT_TOL: f64 = 1e-9;

/// Largest horizon accepted by [`submartingale_check`].
pub const SUBMARTINGALE_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMethod {
    Enumeration,
    PolicyIteration,
}

/// Optimal gain `g`, the bias `h` of the returned policy, and that policy as
/// one action index per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainBiasSolution {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub policy: Vec<usize>,
    pub method: SolveMethod,
}

/// Gain and bias of a deterministic stationary policy. The bias solves
/// `(I - P + P*) h = (I - P*) c`.
pub fn evaluate_policy(mdp: &FiniteMdp<f64>, choice: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mu = Kernel::deterministic(mdp, choice);
    let chain = induced_chain(mdp, &mu)?;
    let (_, limit) = limit_of(&chain)?;
    let c = policy_costs(mdp, &mu);
    let g = mat_vec(&limit.p_star, &c);
    let n = mdp.n_states();
    let mut a = identity(n);
    for x in 0..n {
        for y in 0..n {
            a[x][y] += limit.p_star[x][y] - chain.prob(x, y);
        }
    }
    let rhs: Vec<f64> = c.iter().zip(&g).map(|(c, g)| c - g).collect();
    let h = solve(a, &rhs)?;
    Ok((g, h))
}

fn decode(mut index: usize, counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .map(|&m| {
            let a = index % m;
            index /= m;
            a
        })
        .collect()
}

/// Pointwise minimum of the gains of all deterministic stationary policies,
/// with the first policy (in mixed-radix order, state 0 fastest) attaining
/// it at every state.
pub fn optimal_gain_enum(mdp: &FiniteMdp<f64>) -> Result<GainBiasSolution> {
    let count = mdp.deterministic_policy_count();
    if count > ENUMERATION_CAP as f64 {
        return Err(Error::EnumerationTooLarge { count, cap: ENUMERATION_CAP });
    }
    let count = count as usize;
    let n = mdp.n_states();
    let counts: Vec<usize> = (0..n).map(|x| mdp.n_actions(x)).collect();
    let gain = |i: usize| -> Result<Vec<f64>> { Ok(evaluate_policy(mdp, &decode(i, &counts))?.0) };
    let g_min = (0..count)
        .into_par_iter()
        .map(gain)
        .try_reduce(|| vec![f64::INFINITY; n], |a, b| Ok(a.iter().zip(&b).map(|(u, v)| u.min(*v)).collect()))?;
    let scale = 1.0 + g_min.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let best = (0..count)
        .into_par_iter()
        .map(|i| gain(i).map(|g| (i, g)))
        .filter(|r| match r {
            Ok((_, g)) => g.iter().zip(&g_min).all(|(u, v)| *u <= v + 1e-10 * scale),
            Err(_) => true,
        })
        .find_first(|_| true)
        .expect("some deterministic policy attains the minimum")?;
    let policy = decode(best.0, &counts);
    let (_, h) = evaluate_policy(mdp, &policy)?;
    Ok(GainBiasSolution { g: g_min, h, policy, method: SolveMethod::Enumeration })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Picks the action minimizing `value(a)` over `candidates`, keeping
/// `current` when it is within `eps` of the minimum and otherwise taking the
/// smallest index among the near-minimizers.
fn improve(candidates: &[usize], current: usize, eps: f64, value: impl Fn(usize) -> f64) -> usize {
    let best = candidates.iter().map(|&a| value(a)).fold(f64::INFINITY, f64::min);
    if candidates.contains(&current) && value(current) <= best + eps {
        return current;
    }
    *candidates.iter().find(|&&a| value(a) <= best + eps).expect("nonempty candidates")
}

/// Multichain policy iteration: gain improvement first, bias improvement
/// over the gain-attaining actions once the gain is stable.
pub fn optimal_gain_pi(mdp: &FiniteMdp<f64>) -> Result<GainBiasSolution> {
    let n = mdp.n_states();
    let mut policy: Vec<usize> = (0..n)
        .map(|x| {
            let all: Vec<usize> = (0..mdp.n_actions(x)).collect();
            improve(&all, usize::MAX, 0.0, |a| *mdp.cost(x, a))
        })
        .collect();
    let mut seen = HashSet::new();
    let cost_scale = 1.0 + mdp.costs().iter().flatten().fold(0.0f64, |m, c| m.max(c.abs()));
    for iteration in 0.. {
        if !seen.insert(policy.clone()) {
            return Err(Error::CyclingDetected(iteration));
        }
        let (g, h) = evaluate_policy(mdp, &policy)?;
        let eps_g = 1e-10 * (1.0 + max_abs(&g));
        let eps_h = 1e-10 * (cost_scale + max_abs(&h));
        let next: Vec<usize> = (0..n)
            .map(|x| {
                let all: Vec<usize> = (0..mdp.n_actions(x)).collect();
                improve(&all, policy[x], eps_g, |a| mdp.expect(x, a, &g))
            })
            .collect();
        if next != policy {
            policy = next;
            continue;
        }
        let next: Vec<usize> = (0..n)
            .map(|x| {
                let qg: Vec<f64> = (0..mdp.n_actions(x)).map(|a| mdp.expect(x, a, &g)).collect();
                let best = qg.iter().cloned().fold(f64::INFINITY, f64::min);
                let attaining: Vec<usize> = (0..qg.len()).filter(|&a| qg[a] <= best + eps_g).collect();
                improve(&attaining, policy[x], eps_h, |a| mdp.cost(x, a) + mdp.expect(x, a, &h))
            })
            .collect();
        if next == policy {
            return Ok(GainBiasSolution { g, h, policy, method: SolveMethod::PolicyIteration });
        }
        policy = next;
    }
    unreachable!("policy iteration loop only exits by returning")
}

/// `slack[x][a] = sum_y q(y|x,a) g(y) - g(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainInequality {
    pub slack: Vec<Vec<f64>>,
    /// `min_a slack[x][a]`.
    pub min_slack: Vec<f64>,
    /// `g(x) <= min_a sum_y q(y|x,a) g(y)` everywhere within `1e-9`, which is
    /// the same as every admissible action having nonnegative slack.
    pub verdict: bool,
}

pub fn verify_gain_inequality(mdp: &FiniteMdp<f64>, g: &[f64]) -> Result<GainInequality> {
    let n = mdp.n_states();
    if g.len() != n {
        return Err(Error::DimensionMismatch { what: "gain vector", expected: n, found: g.len() });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("gain must be finite".into()));
    }
    let slack: Vec<Vec<f64>> = (0..n)
        .map(|x| (0..mdp.n_actions(x)).map(|a| mdp.expect(x, a, g) - g[x]).collect())
        .collect();
    let min_slack: Vec<f64> = slack.iter().map(|r| r.iter().cloned().fold(f64::INFINITY, f64::min)).collect();
    let verdict = min_slack.iter().all(|s| *s >= -VERDICT_TOL);
    Ok(GainInequality { slack, min_slack, verdict })
}

/// Conditional drift of `g(x_n)` along a policy, from the exact marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmartingaleTrace {
    /// Smallest `E[g(x_{n+1}) | h_n, a_n] - g(x_n)` over the pairs charged at
    /// stage `n`.
    pub min_increment: Vec<f64>,
    /// `E[g(x_{n+1})] - E[g(x_n)]`.
    pub mean_increment: Vec<f64>,
    pub verdict: bool,
}

/// Checks that `g(x_n)` is a submartingale under `policy` from `x0` for
/// `horizon` steps. The conditional increment given the history and the
/// current action is the slack of the current pair, so it suffices to check
/// the slack on every pair the marginals charge.
pub fn submartingale_check(
    mdp: &FiniteMdp<f64>,
    policy: &Policy<f64>,
    g: &[f64],
    x0: usize,
    horizon: usize,
) -> Result<SubmartingaleTrace> {
    if horizon > SUBMARTINGALE_CAP {
        return Err(Error::HorizonOverflow { requested: horizon, cap: SUBMARTINGALE_CAP });
    }
    let ineq = verify_gain_inequality(mdp, g)?;
    let n = mdp.n_states();
    if x0 >= n {
        return Err(Error::DimensionMismatch { what: "initial state", expected: n, found: x0 });
    }
    let mut p0 = vec![0.0; n];
    p0[x0] = 1.0;
    let mut min_increment = Vec::with_capacity(horizon);
    let mut mean_increment = Vec::with_capacity(horizon);
    for_each_stage(mdp, policy, &p0, horizon, |_, gamma| {
        let mut lo = f64::INFINITY;
        let mut mean = 0.0;
        for (x, row) in gamma.iter().enumerate() {
            for (a, w) in row.iter().enumerate() {
                if *w > 0.0 {
                    lo = lo.min(ineq.slack[x][a]);
                    mean += w * ineq.slack[x][a];
                }
            }
        }
        min_increment.push(lo);
        mean_increment.push(mean);
    })?;
    let verdict = min_increment.iter().all(|s| *s >= -VERDICT_TOL);
    Ok(SubmartingaleTrace { min_increment, mean_increment, verdict })
}

/// `sup_pi P_x(tau_B < infinity)` with a maximizing deterministic policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reachability {
    pub prob: Vec<f64>,
    /// On states reaching the target surely under some policy, an action of
    /// a policy that does so from all of them; elsewhere a greedy action.
    pub witness: Vec<usize>,
    pub iterations: usize,
}

fn support(mdp: &FiniteMdp<f64>, x: usize, a: usize) -> impl Iterator<Item = usize> + '_ {
    mdp.row(x, a).iter().map(|(y, _)| *y)
}

/// States from which the target is reached with probability one under some
/// policy, with an attractor action for each non-target member.
fn prob_one_states(mdp: &FiniteMdp<f64>, target: &[bool]) -> (Vec<bool>, Vec<usize>) {
    let n = mdp.n_states();
    let mut keep = vec![true; n];
    loop {
        let mut reach = target.to_vec();
        let mut action = vec![0usize; n];
        let mut changed = true;
        while changed {
            changed = false;
            for x in 0..n {
                if reach[x] || !keep[x] {
                    continue;
                }
                let found = (0..mdp.n_actions(x))
                    .find(|&a| support(mdp, x, a).all(|y| keep[y]) && support(mdp, x, a).any(|y| reach[y]));
                if let Some(a) = found {
                    reach[x] = true;
                    action[x] = a;
                    changed = true;
                }
            }
        }
        if reach == keep {
            return (keep, action);
        }
        keep = reach;
    }
}

fn check_target(n: usize, target: &[usize]) -> Result<Vec<bool>> {
    if target.is_empty() {
        return Err(Error::EmptyTargetSet);
    }
    let mut mask = vec![false; n];
    for &b in target {
        if b >= n {
            return Err(Error::DimensionMismatch { what: "target state", expected: n, found: b });
        }
        mask[b] = true;
    }
    Ok(mask)
}

/// Least fixed point of `h = max_a q h` off the target, `h = 1` on it.
/// Exact zeros and ones come from graph analysis; the rest from value
/// iteration started at zero, stopped when the sup-norm step drops below
/// `1e-12`.
pub fn max_reachability(mdp: &FiniteMdp<f64>, target: &[usize]) -> Result<Reachability> {
    let n = mdp.n_states();
    let mask = check_target(n, target)?;
    let mut pred = vec![Vec::new(); n];
    for x in 0..n {
        for y in mdp.successors(x) {
            pred[y].push(x);
        }
    }
    let mut can = mask.clone();
    let mut queue: VecDeque<usize> = (0..n).filter(|&x| mask[x]).collect();
    while let Some(y) = queue.pop_front() {
        for &x in &pred[y] {
            if !can[x] {
                can[x] = true;
                queue.push_back(x);
            }
        }
    }
    let (one, attractor) = prob_one_states(mdp, &mask);
    let mut h: Vec<f64> = (0..n).map(|x| if one[x] { 1.0 } else { 0.0 }).collect();
    let unknown: Vec<usize> = (0..n).filter(|&x| can[x] && !one[x]).collect();
    let mut iterations = 0;
    loop {
        let mut step: f64 = 0.0;
        for &x in &unknown {
            let v = (0..mdp.n_actions(x)).map(|a| mdp.expect(x, a, &h)).fold(0.0, f64::max);
            step = step.max((v - h[x]).abs());
            h[x] = v;
        }
        iterations += 1;
        if step < 1e-12 {
            break;
        }
        if iterations >= 10_000_000 {
            return Err(Error::NumericalStall(iterations));
        }
    }
    let witness = (0..n)
        .map(|x| {
            if one[x] {
                attractor[x]
            } else {
                let all: Vec<usize> = (0..mdp.n_actions(x)).collect();
                improve(&all, usize::MAX, 1e-12, |a| -mdp.expect(x, a, &h))
            }
        })
        .collect();
    Ok(Reachability { prob: h, witness, iterations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityCheck {
    pub holds: bool,
    /// For each target `y` in the support, a deterministic policy reaching
    /// `y` with probability one from every state where that is possible.
    pub witnesses: Vec<(usize, Vec<usize>)>,
    /// `(target, start, probability)` for every pair below one.
    pub failures: Vec<(usize, usize, f64)>,
}

/// From every state of `xhat`, each state charged by lambda can be reached
/// with probability one under some policy. Checking singleton targets is
/// enough: reaching `y` surely implies reaching any set containing `y`
/// surely.
pub fn check_reachability_condition(
    mdp: &FiniteMdp<f64>,
    lambda_support: &[usize],
    xhat: &[usize],
) -> Result<ReachabilityCheck> {
    if let Some(y) = lambda_support.iter().find(|y| !xhat.contains(y)) {
        return Err(Error::InvalidArgument(format!("support state {} is outside the state set checked", y)));
    }
    let mut witnesses = Vec::new();
    let mut failures = Vec::new();
    for &y in lambda_support {
        let r = max_reachability(mdp, &[y])?;
        for &x in xhat {
            if r.prob[x] != 1.0 {
                failures.push((y, x, r.prob[x]));
            }
        }
        witnesses.push((y, r.witness));
    }
    Ok(ReachabilityCheck { holds: failures.is_empty(), witnesses, failures })
}

/// Status of the integrability hypothesis behind the upper bound on the
/// optimal gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UiHypothesis {
    /// Finite model with finite gain: the hypothesis holds automatically.
    FiniteScale,
    /// The gain comes from a countable model where the hypothesis is known
    /// to fail.
    KnownToFail(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConstancyVerdict {
    /// `g` equals `ell` on the support and stays below it on `xhat`.
    ConclusionsHold,
    /// Some state of `xhat` exceeds `ell` although the hypotheses hold.
    Violated,
    /// The integrability hypothesis fails, so no conclusion is drawn.
    HypothesisFails(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstancyReport {
    pub ell: f64,
    /// States where `g = ell` within the tolerance.
    pub support: Vec<usize>,
    /// States of `xhat` where `g > ell` beyond the tolerance.
    pub upper_violations: Vec<usize>,
    pub lambda_support: Vec<usize>,
    pub verdict: ConstancyVerdict,
}

pub fn constancy_report(
    g: &[f64],
    lambda_support: &[usize],
    xhat: &[usize],
    hypothesis: &UiHypothesis,
) -> Result<ConstancyReport> {
    if lambda_support.is_empty() {
        return Err(Error::InvalidArgument("lambda has empty support".into()));
    }
    if let Some(&x) = lambda_support.iter().chain(xhat).find(|&&x| x >= g.len()) {
        return Err(Error::DimensionMismatch { what: "state index", expected: g.len(), found: x });
    }
    let vals: Vec<f64> = lambda_support.iter().map(|&x| g[x]).collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > VERDICT_TOL {
        return Err(Error::NonConstantOnSupport { min: lo, max: hi });
    }
    let ell = vals[0];
    let support = (0..g.len()).filter(|&x| (g[x] - ell).abs() <= VERDICT_TOL).collect();
    let upper_violations: Vec<usize> = xhat.iter().cloned().filter(|&x| g[x] > ell + VERDICT_TOL).collect();
    let verdict = match hypothesis {
        UiHypothesis::KnownToFail(reason) => ConstancyVerdict::HypothesisFails(reason.clone()),
        UiHypothesis::FiniteScale if upper_violations.is_empty() => ConstancyVerdict::ConclusionsHold,
        UiHypothesis::FiniteScale => ConstancyVerdict::Violated,
    };
    Ok(ConstancyReport { ell, support, upper_violations, lambda_support: lambda_support.to_vec(), verdict })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    WeaklyCommunicating,
    Multichain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectedClasses {
    /// Maximal sets closed under some choice of actions and strongly
    /// connected under those actions.
    pub classes: Vec<Vec<usize>>,
    /// States outside every class; transient under every policy.
    pub transient: Vec<usize>,
    pub classification: Classification,
}

/// Connected classes as maximal end components: repeatedly drop actions
/// that can leave the strongly connected component of their state, and
/// states left without actions, until nothing changes.
pub fn connected_classes(mdp: &FiniteMdp<f64>) -> ConnectedClasses {
    let n = mdp.n_states();
    let mut alive = vec![true; n];
    let mut allowed: Vec<Vec<usize>> = (0..n).map(|x| (0..mdp.n_actions(x)).collect()).collect();
    loop {
        let succ: Vec<Vec<usize>> = (0..n)
            .map(|x| {
                let mut ys: Vec<usize> = allowed[x].iter().flat_map(|&a| support(mdp, x, a)).filter(|&y| alive[y]).collect();
                ys.sort_unstable();
                ys.dedup();
                ys
            })
            .collect();
        let mut comp_of = vec![usize::MAX; n];
        for (i, comp) in strongly_connected(&succ).iter().enumerate() {
            comp.iter().for_each(|&x| comp_of[x] = i);
        }
        let mut changed = false;
        for x in 0..n {
            if !alive[x] {
                continue;
            }
            let before = allowed[x].len();
            allowed[x].retain(|&a| support(mdp, x, a).all(|y| alive[y] && comp_of[y] == comp_of[x]));
            changed |= allowed[x].len() != before;
            if allowed[x].is_empty() {
                alive[x] = false;
            }
        }
        if !changed {
            let mut classes: Vec<Vec<usize>> = Vec::new();
            let mut index = std::collections::BTreeMap::new();
            for x in (0..n).filter(|&x| alive[x]) {
                let k = *index.entry(comp_of[x]).or_insert_with(|| {
                    classes.push(Vec::new());
                    classes.len() - 1
                });
                classes[k].push(x);
            }
            let transient = (0..n).filter(|&x| !alive[x]).collect();
            let classification =
                if classes.len() == 1 { Classification::WeaklyCommunicating } else { Classification::Multichain };
            return ConnectedClasses { classes, transient, classification };
        }
    }
}

/// Everything `optimize` reports, in the versioned JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub schema: u32,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    /// Action label chosen at each state.
    pub policy: Vec<String>,
    pub method: SolveMethod,
    pub classification: Classification,
    pub classes: Vec<Vec<usize>>,
    pub inequality_slacks: Vec<Vec<f64>>,
    pub inequality_holds: bool,
    pub constancy: Option<ConstancyReport>,
}

/// Solves `mdp` by policy iteration and assembles the report; the
/// constancy section is filled when an initial state is given and the
/// reachability condition holds for it.
pub fn optimality_report(mdp: &FiniteMdp<f64>, x0: Option<usize>) -> Result<OptimalityReport> {
    let sol = optimal_gain_pi(mdp)?;
    let classes = connected_classes(mdp);
    let ineq = verify_gain_inequality(mdp, &sol.g)?;
    let constancy = match x0 {
        Some(x) => {
            let xhat: Vec<usize> = (0..mdp.n_states()).collect();
            let check = check_reachability_condition(mdp, &[x], &xhat)?;
            if check.holds {
                Some(constancy_report(&sol.g, &[x], &xhat, &UiHypothesis::FiniteScale)?)
            } else {
                None
            }
        }
        None => None,
    };
    Ok(OptimalityReport {
        schema: 1,
        policy: sol.policy.iter().enumerate().map(|(x, &a)| mdp.action_labels(x)[a].clone()).collect(),
        g: sol.g,
        h: sol.h,
        method: sol.method,
        classification: classes.classification,
        classes: classes.classes,
        inequality_slacks: ineq.slack,
        inequality_holds: ineq.verdict,
        constancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::hitting_probability;
    use crate::countable::AbsorbingChain;
    use crate::criteria::avg_cost_stationary;
    use crate::gen::{index_labels, random_kernel, random_mdp};
    use crate::policy::MarkovPolicy;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mdp(q: Vec<Vec<Vec<f64>>>, c: Vec<Vec<f64>>) -> FiniteMdp<f64> {
        let counts: Vec<usize> = q.iter().map(|r| r.len()).collect();
        FiniteMdp::new(index_labels(&counts), q, c).unwrap()
    }

    /// Action 0 self-loops at cost 1, action 1 jumps to the other state at cost 0.
    fn loop_or_jump() -> FiniteMdp<f64> {
        mdp(
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0], vec![1.0, 0.0]]],
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        )
    }

    fn two_absorbing() -> FiniteMdp<f64> {
        mdp(vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]], vec![vec![0.0], vec![1.0]])
    }

    fn absorbing_truncation(level: usize) -> FiniteMdp<f64> {
        AbsorbingChain::harmonic_bounded().model_f64().truncate(level).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(u, v)| (u - v).abs() <= tol)
    }

    #[test]
    fn single_action_enum_is_policy_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mdp(&mut rng, 5, 1, 0.5);
        let sol = optimal_gain_enum(&m).unwrap();
        let rep = avg_cost_stationary(&m, &Kernel::deterministic(&m, &[0; 5])).unwrap();
        assert!(close(&sol.g, &rep.rows.iter().map(|r| r.j[0]).collect::<Vec<_>>(), 1e-12));
    }

    #[test]
    fn zero_cost_cycle_wins() {
        let m = loop_or_jump();
        for sol in [optimal_gain_enum(&m).unwrap(), optimal_gain_pi(&m).unwrap()] {
            assert!(close(&sol.g, &[0.0, 0.0], 1e-12));
            assert_eq!(sol.policy, vec![1, 1]);
        }
    }

    #[test]
    fn methods_agree_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let m = random_mdp(&mut rng, 4, 3, 0.5);
            let a = optimal_gain_enum(&m).unwrap();
            let b = optimal_gain_pi(&m).unwrap();
            assert!(close(&a.g, &b.g, 1e-9), "{:?} vs {:?}", a.g, b.g);
            let (gb, _) = evaluate_policy(&m, &b.policy).unwrap();
            assert!(close(&gb, &b.g, 1e-12));
        }
    }

    #[test]
    fn enumeration_cap() {
        let mut qs = Vec::new();
        let mut cs = Vec::new();
        for x in 0..13 {
            let mut row = vec![0.0; 13];
            row[x] = 1.0;
            qs.push(vec![row; 3]);
            cs.push(vec![0.0; 3]);
        }
        let m = mdp(qs, cs);
        assert!(matches!(optimal_gain_enum(&m), Err(Error::EnumerationTooLarge { .. })));
        assert!(optimal_gain_pi(&m).is_ok());
    }

    #[test]
    fn uncontrolled_chain_gain_is_cesaro_cost() {
        let m = absorbing_truncation(30);
        let sol = optimal_gain_pi(&m).unwrap();
        assert!(sol.g.iter().all(|g| g.abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_mdp(&mut rng, 6, 1, 0.4);
        let sol = optimal_gain_pi(&m).unwrap();
        let rep = avg_cost_stationary(&m, &Kernel::deterministic(&m, &[0; 6])).unwrap();
        assert!(close(&sol.g, &rep.rows.iter().map(|r| r.j[0]).collect::<Vec<_>>(), 1e-12));
    }

    #[test]
    fn gain_inequality_cases() {
        let m = loop_or_jump();
        let ineq = verify_gain_inequality(&m, &[3.0, 3.0]).unwrap();
        assert!(ineq.slack.iter().flatten().all(|s| *s == 0.0));
        assert!(ineq.verdict);
        // g(k) = k on the absorbing chain: zero slack below the boundary.
        let level = 40;
        let chain = absorbing_truncation(level);
        let g: Vec<f64> = (0..=level).map(|k| k as f64).collect();
        let ineq = verify_gain_inequality(&chain, &g).unwrap();
        for k in 1..level {
            assert!(ineq.slack[k][0].abs() < 1e-12, "k={} slack={}", k, ineq.slack[k][0]);
        }
        assert!(verify_gain_inequality(&chain, &[0.0]).is_err());
        let bad = verify_gain_inequality(&loop_or_jump(), &[1.0, 0.0]).unwrap();
        assert!(!bad.verdict);
        assert_eq!(bad.min_slack, vec![-1.0, 0.0]);
    }

    #[test]
    fn martingale_along_absorbing_chain() {
        let level = 60;
        let chain = absorbing_truncation(level);
        let g: Vec<f64> = (0..=level).map(|k| k as f64).collect();
        let policy = Policy::Stationary(Kernel::deterministic(&chain, &vec![0; level + 1]));
        let trace = submartingale_check(&chain, &policy, &g, 3, 30).unwrap();
        assert!(trace.verdict);
        assert!(trace.min_increment.iter().all(|d| d.abs() < 1e-12));
        assert!(trace.mean_increment.iter().all(|d| d.abs() < 1e-12));
        let flat = submartingale_check(&chain, &policy, &vec![2.5; level + 1], 3, 10).unwrap();
        assert!(flat.min_increment.iter().all(|d| *d == 0.0));
        assert!(submartingale_check(&chain, &policy, &g, 3, SUBMARTINGALE_CAP + 1).is_err());
    }

    #[test]
    fn optimal_gain_is_submartingale_under_any_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let m = random_mdp(&mut rng, 5, 3, 0.4);
            let g = optimal_gain_pi(&m).unwrap().g;
            let pi = MarkovPolicy::periodic(vec![], vec![random_kernel(&mut rng, &m), random_kernel(&mut rng, &m)]);
            let x0 = rng.gen_range(0..5);
            assert!(submartingale_check(&m, &Policy::Markov(pi), &g, x0, 50).unwrap().verdict);
        }
    }

    #[test]
    fn reachability_cases() {
        let m = loop_or_jump();
        assert_eq!(max_reachability(&m, &[0, 1]).unwrap().prob, vec![1.0, 1.0]);
        assert!(matches!(max_reachability(&m, &[]), Err(Error::EmptyTargetSet)));
        let chain = absorbing_truncation(50);
        assert!(max_reachability(&chain, &[0]).unwrap().prob.iter().all(|p| *p == 1.0));
        let split = two_absorbing();
        assert_eq!(max_reachability(&split, &[1]).unwrap().prob, vec![0.0, 1.0]);
    }

    #[test]
    fn reachability_condition_cases() {
        let single = mdp(vec![vec![vec![1.0]]], vec![vec![0.0]]);
        assert!(check_reachability_condition(&single, &[0], &[0]).unwrap().holds);
        let chain = absorbing_truncation(50);
        let all: Vec<usize> = (0..=50).collect();
        assert!(check_reachability_condition(&chain, &[0], &all).unwrap().holds);
        let split = two_absorbing();
        let check = check_reachability_condition(&split, &[0, 1], &[0, 1]).unwrap();
        assert!(!check.holds);
        assert_eq!(check.failures, vec![(0, 1, 0.0), (1, 0, 0.0)]);
        assert!(check_reachability_condition(&split, &[1], &[0]).is_err());
    }

    #[test]
    fn constancy_cases() {
        let g0 = vec![0.0; 11];
        let all: Vec<usize> = (0..=10).collect();
        let rep = constancy_report(&g0, &[0], &all, &UiHypothesis::FiniteScale).unwrap();
        assert_eq!(rep.ell, 0.0);
        assert!(rep.upper_violations.is_empty());
        assert_eq!(rep.verdict, ConstancyVerdict::ConclusionsHold);
        // Linear cost: g(k) = k exceeds ell = 0 off the support.
        let gk: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let hyp = UiHypothesis::KnownToFail("g(x_n) not uniformly integrable".into());
        let rep = constancy_report(&gk, &[0], &all, &hyp).unwrap();
        assert_eq!(rep.upper_violations, (1..=10).collect::<Vec<_>>());
        assert!(matches!(rep.verdict, ConstancyVerdict::HypothesisFails(_)));
        let rep = constancy_report(&gk, &[0], &all, &UiHypothesis::FiniteScale).unwrap();
        assert_eq!(rep.verdict, ConstancyVerdict::Violated);
        assert!(matches!(
            constancy_report(&gk, &[0, 1], &all, &UiHypothesis::FiniteScale),
            Err(Error::NonConstantOnSupport { .. })
        ));
        assert!(constancy_report(&gk, &[], &all, &UiHypothesis::FiniteScale).is_err());
    }

    #[test]
    fn class_cases() {
        let full = connected_classes(&loop_or_jump());
        assert_eq!(full.classes, vec![vec![0, 1]]);
        assert_eq!(full.classification, Classification::WeaklyCommunicating);
        let split = connected_classes(&two_absorbing());
        assert_eq!(split.classification, Classification::Multichain);
        assert_eq!(split.classes.len(), 2);
        let chain = connected_classes(&absorbing_truncation(20));
        assert_eq!(chain.classes, vec![vec![0]]);
        assert_eq!(chain.transient, (1..=20).collect::<Vec<_>>());
        assert_eq!(chain.classification, Classification::WeaklyCommunicating);
    }

    #[test]
    fn report_layout() {
        let rep = optimality_report(&loop_or_jump(), Some(0)).unwrap();
        assert_eq!(rep.schema, 1);
        assert_eq!(rep.policy, vec!["1".to_string(), "1".to_string()]);
        assert!(rep.inequality_holds);
        assert_eq!(rep.constancy.unwrap().verdict, ConstancyVerdict::ConclusionsHold);
        let rep = optimality_report(&two_absorbing(), Some(0)).unwrap();
        assert!(rep.constancy.is_none());
        let single = mdp(vec![vec![vec![1.0]]], vec![vec![0.0]]);
        assert_eq!(optimality_report(&single, None).unwrap().g, vec![0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pi_matches_enum_and_satisfies_inequality(seed in any::<u64>(), n in 1usize..=4, m in 1usize..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_mdp(&mut rng, n, m, 0.5);
            let a = optimal_gain_enum(&model).unwrap();
            let b = optimal_gain_pi(&model).unwrap();
            prop_assert!(close(&a.g, &b.g, 1e-9));
            let ineq = verify_gain_inequality(&model, &b.g).unwrap();
            prop_assert!(ineq.verdict);
            prop_assert!(ineq.slack.iter().flatten().all(|s| *s >= -1e-9));
            if connected_classes(&model).classification == Classification::WeaklyCommunicating {
                let hi = b.g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = b.g.iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert!(hi - lo <= 1e-9);
            }
        }

        #[test]
        fn reachability_is_least_fixed_point(seed in any::<u64>(), n in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_mdp(&mut rng, n, 3, 0.3);
            let target = vec![rng.gen_range(0..n)];
            let r = max_reachability(&model, &target).unwrap();
            for x in 0..n {
                let v = if target.contains(&x) {
                    1.0
                } else {
                    (0..model.n_actions(x)).map(|a| model.expect(x, a, &r.prob)).fold(0.0, f64::max)
                };
                prop_assert!((v - r.prob[x]).abs() <= 1e-12);
            }
            // The witness reaches the target surely wherever that is possible.
            let chain = induced_chain(&model, &Kernel::deterministic(&model, &r.witness)).unwrap();
            let hit = hitting_probability(&chain, &target).unwrap();
            for x in 0..n {
                if r.prob[x] == 1.0 {
                    prop_assert_eq!(hit[x], 1.0);
                }
                prop_assert!(hit[x] <= r.prob[x] + 1e-9);
            }
        }
    }
}
