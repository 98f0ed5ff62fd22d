//! Markov chains induced by stationary policies: class decomposition,
//! stationary distributions, the Cesàro limit matrix, hitting probabilities
//! and expected hitting times.

use std::collections::VecDeque;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Lu, Matrix};
use crate::mdp::{CountableMdp, FiniteMdp, PROB_TOL};
use crate::policy::Kernel;
use crate::scalar::Scalar;

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Where a chain came from, for reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub mdp: String,
    pub policy: String,
}

/// A row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain<T = f64> {
    p: Vec<Vec<T>>,
    pub provenance: Option<Provenance>,
}

impl<T: Scalar> MarkovChain<T> {
    pub fn new(p: Vec<Vec<T>>) -> Result<Self> {
        let n = p.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty transition matrix".into()));
        }
        for (x, row) in p.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch { what: "chain row", expected: n, found: row.len() });
            }
            if let Some(v) = row.iter().find(|v| **v < T::zero() || !v.is_finite_value()) {
                return Err(Error::NegativeProbability { state: x, action: 0, value: v.to_f64() });
            }
            let s = crate::scalar::sum(row);
            let dev = s.clone() - T::one();
            let ok = if T::EXACT { dev.is_zero() } else { dev.to_f64().abs() <= PROB_TOL };
            if !ok {
                return Err(Error::RowSum { state: x, action: 0, sum: s.to_f64() });
            }
        }
        Ok(MarkovChain { p, provenance: None })
    }

    pub fn with_provenance(mut self, mdp: impl Into<String>, policy: impl Into<String>) -> Self {
        self.provenance = Some(Provenance { mdp: mdp.into(), policy: policy.into() });
        self
    }

    pub fn n_states(&self) -> usize {
        self.p.len()
    }

    pub fn matrix(&self) -> &[Vec<T>] {
        &self.p
    }

    pub fn prob(&self, x: usize, y: usize) -> &T {
        &self.p[x][y]
    }

    /// Successor lists of the support graph.
    pub fn successors(&self) -> Vec<Vec<usize>> {
        self.p
            .iter()
            .map(|row| row.iter().enumerate().filter(|(_, v)| !v.is_zero()).map(|(y, _)| y).collect())
            .collect()
    }

    pub fn to_f64(&self) -> MarkovChain<f64> {
        MarkovChain {
            p: self.p.iter().map(|r| r.iter().map(Scalar::to_f64).collect()).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// `P(y|x) = sum_a q(y|x,a) mu(a|x)`.
pub fn induced_chain<T: Scalar>(mdp: &FiniteMdp<T>, mu: &Kernel<T>) -> Result<MarkovChain<T>> {
    mu.validate(mdp)?;
    let n = mdp.n_states();
    let mut p = vec![vec![T::zero(); n]; n];
    for (x, row) in p.iter_mut().enumerate() {
        for (a, w) in mu.dist(x).iter().enumerate() {
            if w.is_zero() {
                continue;
            }
            for (y, q) in mdp.row(x, a) {
                row[*y] = row[*y].clone() + w.clone() * q.clone();
            }
        }
    }
    MarkovChain::new(p)
}

/// Recurrent classes (closed strongly connected components), the transient
/// remainder, and the period of each class. The union of the classes is the
/// conservative part, the transient set the dissipative part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDecomposition {
    pub recurrent_classes: Vec<Vec<usize>>,
    pub transient: Vec<usize>,
    pub periods: Vec<usize>,
    /// Index of the recurrent class containing each state.
    pub class_of: Vec<Option<usize>>,
}

/// Strongly connected components of a successor-list graph, each sorted,
/// ordered by smallest member.
pub(crate) fn strongly_connected(succ: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut g = DiGraph::<(), ()>::with_capacity(succ.len(), 0);
    let nodes: Vec<_> = (0..succ.len()).map(|_| g.add_node(())).collect();
    for (x, ys) in succ.iter().enumerate() {
        for &y in ys {
            g.add_edge(nodes[x], nodes[y], ());
        }
    }
    let mut comps: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|n| n.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    comps.sort_by_key(|c| c[0]);
    comps
}

pub fn decompose<T: Scalar>(chain: &MarkovChain<T>) -> ClassDecomposition {
    let succ = chain.successors();
    let n = succ.len();
    let mut class_of = vec![None; n];
    let mut recurrent_classes = Vec::new();
    let mut periods = Vec::new();
    for comp in strongly_connected(&succ) {
        let mut member = vec![false; n];
        comp.iter().for_each(|&x| member[x] = true);
        let closed = comp.iter().all(|&x| succ[x].iter().all(|&y| member[y]));
        if !closed {
            continue;
        }
        let idx = recurrent_classes.len();
        comp.iter().for_each(|&x| class_of[x] = Some(idx));
        periods.push(class_period(&succ, &comp, &member));
        recurrent_classes.push(comp);
    }
    let transient = (0..n).filter(|x| class_of[*x].is_none()).collect();
    ClassDecomposition { recurrent_classes, transient, periods, class_of }
}

/// gcd of `level(u) + 1 - level(v)` over the class's edges, with BFS levels
/// from the smallest member.
fn class_period(succ: &[Vec<usize>], comp: &[usize], member: &[bool]) -> usize {
    let mut level = vec![usize::MAX; succ.len()];
    let root = comp[0];
    level[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &v in &succ[u] {
            if member[v] && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0;
    for &u in comp {
        for &v in &succ[u] {
            if member[v] {
                g = gcd(g, (level[u] + 1).abs_diff(level[v]));
            }
        }
    }
    g.max(1)
}

/// `P*` together with the pieces it is assembled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CesaroLimit {
    pub p_star: Matrix,
    /// Stationary distribution of each recurrent class, as a full-length
    /// vector vanishing off the class.
    pub per_class_stationary: Vec<Vec<f64>>,
    /// `absorption[x][r]` = probability of eventually entering class `r`
    /// from `x`.
    pub absorption: Vec<Vec<f64>>,
}

/// Unique stationary distribution of a closed irreducible class.
pub fn class_stationary(chain: &MarkovChain<f64>, class: &[usize]) -> Result<Vec<f64>> {
    let m = class.len();
    // pi (P_R - I) = 0 with the last equation replaced by sum(pi) = 1.
    let mut a = vec![vec![0.0; m]; m];
    for (i, &x) in class.iter().enumerate() {
        for (j, &y) in class.iter().enumerate() {
            a[j][i] = chain.p[x][y] - if i == j { 1.0 } else { 0.0 };
        }
    }
    a[m - 1] = vec![1.0; m];
    let mut rhs = vec![0.0; m];
    rhs[m - 1] = 1.0;
    let local = crate::linalg::solve(a, &rhs)?;
    let mut pi = vec![0.0; chain.n_states()];
    for (i, &x) in class.iter().enumerate() {
        pi[x] = local[i].max(0.0);
    }
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= s);
    Ok(pi)
}

/// Probability of absorption into each recurrent class.
pub fn absorption_probabilities(chain: &MarkovChain<f64>, decomp: &ClassDecomposition) -> Result<Vec<Vec<f64>>> {
    let n = chain.n_states();
    let r = decomp.recurrent_classes.len();
    let mut out = vec![vec![0.0; r]; n];
    for x in 0..n {
        if let Some(c) = decomp.class_of[x] {
            out[x][c] = 1.0;
        }
    }
    let t = &decomp.transient;
    if t.is_empty() {
        return Ok(out);
    }
    let mut a = vec![vec![0.0; t.len()]; t.len()];
    for (i, &x) in t.iter().enumerate() {
        for (j, &y) in t.iter().enumerate() {
            a[i][j] = if i == j { 1.0 } else { 0.0 } - chain.p[x][y];
        }
    }
    let lu = Lu::factor(a)?;
    for class in 0..r {
        let rhs: Vec<f64> = t
            .iter()
            .map(|&x| decomp.recurrent_classes[class].iter().map(|&y| chain.p[x][y]).sum())
            .collect();
        let sol = lu.solve(&rhs);
        for (i, &x) in t.iter().enumerate() {
            out[x][class] = sol[i].clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// `P*(x,.) = sum_R Pr_x(absorb in R) pi_R`.
pub fn cesaro_matrix(chain: &MarkovChain<f64>, decomp: &ClassDecomposition) -> Result<CesaroLimit> {
    let n = chain.n_states();
    if decomp.class_of.len() != n {
        return Err(Error::DimensionMismatch { what: "decomposition", expected: n, found: decomp.class_of.len() });
    }
    let per_class_stationary = decomp
        .recurrent_classes
        .iter()
        .map(|c| class_stationary(chain, c))
        .collect::<Result<Vec<_>>>()?;
    let absorption = absorption_probabilities(chain, decomp)?;
    let mut p_star = vec![vec![0.0; n]; n];
    for x in 0..n {
        for (r, pi) in per_class_stationary.iter().enumerate() {
            let w = absorption[x][r];
            if w == 0.0 {
                continue;
            }
            for &y in &decomp.recurrent_classes[r] {
                p_star[x][y] += w * pi[y];
            }
        }
    }
    Ok(CesaroLimit { p_star, per_class_stationary, absorption })
}

/// Convenience: decomposition and limit matrix in one call.
pub fn limit_of(chain: &MarkovChain<f64>) -> Result<(ClassDecomposition, CesaroLimit)> {
    let d = decompose(chain);
    let l = cesaro_matrix(chain, &d)?;
    Ok((d, l))
}

fn target_mask(n: usize, target: &[usize]) -> Result<Vec<bool>> {
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

/// States with a path into `goal` (goal states included).
fn can_reach(succ: &[Vec<usize>], goal: &[bool]) -> Vec<bool> {
    let n = succ.len();
    let mut pred = vec![Vec::new(); n];
    for (x, ys) in succ.iter().enumerate() {
        for &y in ys {
            pred[y].push(x);
        }
    }
    let mut seen = goal.to_vec();
    let mut queue: VecDeque<usize> = (0..n).filter(|x| goal[*x]).collect();
    while let Some(y) = queue.pop_front() {
        for &x in &pred[y] {
            if !seen[x] {
                seen[x] = true;
                queue.push_back(x);
            }
        }
    }
    seen
}

/// Graph pre-analysis: (states that reach the target with probability 0,
/// states that reach it with probability 1).
fn zero_one_sets(succ: &[Vec<usize>], target: &[bool]) -> (Vec<bool>, Vec<bool>) {
    let n = succ.len();
    let reach = can_reach(succ, target);
    let zero: Vec<bool> = reach.iter().map(|r| !r).collect();
    // A state hits the target surely iff it cannot reach a zero state
    // without passing through the target first.
    let avoid_succ: Vec<Vec<usize>> = (0..n)
        .map(|x| if target[x] { Vec::new() } else { succ[x].clone() })
        .collect();
    let reach_zero = can_reach(&avoid_succ, &zero);
    let one = (0..n).map(|x| target[x] || !reach_zero[x]).collect();
    (zero, one)
}

/// Minimal nonnegative solution of `h = 1` on the target,
/// `h(x) = sum_y P(y|x) h(y)` elsewhere.
pub fn hitting_probability(chain: &MarkovChain<f64>, target: &[usize]) -> Result<Vec<f64>> {
    let n = chain.n_states();
    let mask = target_mask(n, target)?;
    let succ = chain.successors();
    let (zero, one) = zero_one_sets(&succ, &mask);
    let mut h: Vec<f64> = (0..n).map(|x| if one[x] { 1.0 } else { 0.0 }).collect();
    let unknown: Vec<usize> = (0..n).filter(|&x| !zero[x] && !one[x]).collect();
    if unknown.is_empty() {
        return Ok(h);
    }
    let mut a = vec![vec![0.0; unknown.len()]; unknown.len()];
    let mut rhs = vec![0.0; unknown.len()];
    for (i, &x) in unknown.iter().enumerate() {
        for (j, &y) in unknown.iter().enumerate() {
            a[i][j] = if i == j { 1.0 } else { 0.0 } - chain.p[x][y];
        }
        rhs[i] = (0..n).filter(|&y| one[y]).map(|y| chain.p[x][y]).sum();
    }
    let sol = crate::linalg::solve(a, &rhs)?;
    for (i, &x) in unknown.iter().enumerate() {
        h[x] = sol[i].clamp(0.0, 1.0);
    }
    Ok(h)
}

/// `E_x[tau_B]`, with `f64::INFINITY` wherever the target is missed with
/// positive probability.
pub fn expected_hitting_time(chain: &MarkovChain<f64>, target: &[usize]) -> Result<Vec<f64>> {
    let n = chain.n_states();
    let mask = target_mask(n, target)?;
    let succ = chain.successors();
    let (_, one) = zero_one_sets(&succ, &mask);
    let mut m: Vec<f64> = (0..n).map(|x| if one[x] { 0.0 } else { f64::INFINITY }).collect();
    let inner: Vec<usize> = (0..n).filter(|&x| one[x] && !mask[x]).collect();
    if inner.is_empty() {
        return Ok(m);
    }
    let mut a = vec![vec![0.0; inner.len()]; inner.len()];
    for (i, &x) in inner.iter().enumerate() {
        for (j, &y) in inner.iter().enumerate() {
            a[i][j] = if i == j { 1.0 } else { 0.0 } - chain.p[x][y];
        }
    }
    let sol = crate::linalg::solve(a, &vec![1.0; inner.len()])?;
    for (i, &x) in inner.iter().enumerate() {
        m[x] = sol[i];
    }
    Ok(m)
}

/// Expected hitting times of a countable chain read off a sequence of
/// truncations. A finite truncation can exhibit growth but never prove an
/// infinite limit, so the sweep reports values and a growth flag only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationSweep {
    pub levels: Vec<usize>,
    pub values: Vec<f64>,
    /// Values strictly increase along the sweep.
    pub monotone_growth: bool,
}

/// Hitting times of `target` from `start` on truncations of an uncontrolled
/// countable model (action 0 everywhere).
pub fn hitting_time_sweep(
    model: &CountableMdp<f64>,
    start: usize,
    target: &[usize],
    levels: &[usize],
) -> Result<TruncationSweep> {
    let mut values = Vec::with_capacity(levels.len());
    for &level in levels {
        if start > level || target.iter().any(|&b| b > level) {
            return Err(Error::InvalidArgument(format!("truncation level {} below start or target", level)));
        }
        let mdp = model.truncate(level)?;
        let mu = Kernel::deterministic(&mdp, &vec![0; mdp.n_states()]);
        let chain = induced_chain(&mdp, &mu)?;
        values.push(expected_hitting_time(&chain, target)?[start]);
    }
    let monotone_growth = values.windows(2).all(|w| w[1] > w[0]);
    Ok(TruncationSweep { levels: levels.to_vec(), values, monotone_growth })
}
