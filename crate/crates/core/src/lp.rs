//! The occupation-measure linear program of a Markov chain,
//!
//! ```text
//! gamma(k)         - sum_j p(j,k) gamma(j) = 0
//! gamma(k) + nu(k) - sum_j p(j,k) nu(j)    = b(k)
//! gamma, nu >= 0
//! ```
//!
//! solved by a two-phase simplex method with Bland's rule, in floating point
//! or in exact rational arithmetic, and swept over truncations of a
//! countable chain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{induced_chain, MarkovChain};
use crate::error::{Error, Result};
use crate::mdp::{CountableMdp, PROB_TOL};
use crate::policy::Kernel;
use crate::scalar::{Rational, Scalar};

/// Pivot budget of one solve.
pub const PIVOT_CAP: usize = 1_000_000;

/// Zero threshold of the floating simplex; exact mode compares with zero.
const EPS: f64 = 1e-11;

/// Equality-constrained program `A x = rhs, x >= 0` over
/// `x = (gamma(0..n), nu(0..n))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProgram<T = f64> {
    pub n_states: usize,
    pub a: Vec<Vec<T>>,
    pub rhs: Vec<T>,
}

impl<T: Scalar> LpProgram<T> {
    pub fn n_vars(&self) -> usize {
        2 * self.n_states
    }

    /// Default objective: minimize the total mass of `nu`.
    pub fn nu_mass_objective(&self) -> Vec<T> {
        (0..self.n_vars()).map(|j| if j < self.n_states { T::zero() } else { T::one() }).collect()
    }

    /// Largest `|A x - rhs|`.
    pub fn residual(&self, x: &[T]) -> f64 {
        self.a
            .iter()
            .zip(&self.rhs)
            .map(|(row, r)| {
                let lhs = row.iter().zip(x).fold(T::zero(), |s, (a, v)| s + a.clone() * v.clone());
                (lhs - r.clone()).to_f64().abs()
            })
            .fold(0.0, f64::max)
    }

    /// `y^T A <= 0` on every column (within `1e-9` in floating point) and
    /// `y^T rhs > 0`.
    pub fn verify_farkas(&self, y: &[T]) -> bool {
        if y.len() != self.a.len() {
            return false;
        }
        let cols_ok = (0..self.n_vars()).all(|j| {
            let v = self.a.iter().zip(y).fold(T::zero(), |s, (row, yi)| s + row[j].clone() * yi.clone());
            if T::EXACT { v <= T::zero() } else { v.to_f64() <= 1e-9 }
        });
        let value = self.rhs.iter().zip(y).fold(T::zero(), |s, (r, yi)| s + r.clone() * yi.clone());
        let pos = if T::EXACT { value > T::zero() } else { value.to_f64() > 1e-9 };
        cols_ok && pos
    }
}

fn check_weights<T: Scalar>(b: &[T], n: usize) -> Result<()> {
    if b.len() != n {
        return Err(Error::WeightError(format!("{} weights for {} states", b.len(), n)));
    }
    if let Some(k) = b.iter().position(|v| *v <= T::zero()) {
        return Err(Error::WeightError(format!("weight {} is not positive", k)));
    }
    let dev = crate::scalar::sum(b) - T::one();
    if !dev.near_zero(PROB_TOL) {
        return Err(Error::WeightError(format!("weights sum to {}", dev + T::one())));
    }
    Ok(())
}

/// The constraint rows for `chain` with weights `b`.
pub fn build_lp<T: Scalar>(chain: &MarkovChain<T>, b: &[T]) -> Result<LpProgram<T>> {
    let n = chain.n_states();
    check_weights(b, n)?;
    let mut a = vec![vec![T::zero(); 2 * n]; 2 * n];
    for k in 0..n {
        for j in 0..n {
            let coef = if j == k { T::one() } else { T::zero() } - chain.prob(j, k).clone();
            a[k][j] = coef.clone();
            a[n + k][n + j] = coef;
        }
        a[n + k][k] = T::one();
    }
    let mut rhs = vec![T::zero(); 2 * n];
    rhs[n..].clone_from_slice(b);
    Ok(LpProgram { n_states: n, a, rhs })
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome<T = f64> {
    Feasible { x: Vec<T>, objective: T, pivots: usize },
    /// `certificate` is a Farkas vector: `y^T A <= 0`, `y^T rhs > 0`.
    Infeasible { certificate: Vec<T>, pivots: usize },
    Unbounded { pivots: usize },
}

impl<T: Scalar> LpOutcome<T> {
    pub fn status(&self) -> &'static str {
        match self {
            LpOutcome::Feasible { .. } => "feasible",
            LpOutcome::Infeasible { .. } => "infeasible",
            LpOutcome::Unbounded { .. } => "unbounded",
        }
    }

    pub fn pivots(&self) -> usize {
        match self {
            LpOutcome::Feasible { pivots, .. }
            | LpOutcome::Infeasible { pivots, .. }
            | LpOutcome::Unbounded { pivots } => *pivots,
        }
    }
}

fn is_neg<T: Scalar>(v: &T) -> bool {
    v.is_neg_tol(EPS)
}

fn is_pos<T: Scalar>(v: &T) -> bool {
    v.is_pos_tol(EPS)
}

/// Dense simplex tableau. `rows[i]` holds the constraint row followed by the
/// right-hand side; `cost` holds the reduced costs.
struct Tableau<T> {
    rows: Vec<Vec<T>>,
    basis: Vec<usize>,
    cost: Vec<T>,
    /// Columns that may not enter the basis.
    barred: Vec<bool>,
    pivots: usize,
}

enum Step {
    Optimal,
    Unbounded,
}

impl<T: Scalar> Tableau<T> {
    fn width(&self) -> usize {
        self.cost.len()
    }

    fn pivot(&mut self, r: usize, c: usize) -> Result<()> {
        self.pivots += 1;
        if self.pivots > PIVOT_CAP {
            return Err(Error::NumericalStall(PIVOT_CAP));
        }
        let p = self.rows[r][c].clone();
        let w = self.rows[r].len();
        for v in self.rows[r].iter_mut() {
            *v = v.clone() / p.clone();
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let f = row[c].clone();
            for j in 0..w {
                if !pivot_row[j].is_zero() {
                    row[j] = row[j].clone() - f.clone() * pivot_row[j].clone();
                }
            }
            if !T::EXACT {
                row[c] = T::zero();
            }
        }
        let f = self.cost[c].clone();
        if !f.is_zero() {
            for j in 0..self.width() {
                if !pivot_row[j].is_zero() {
                    self.cost[j] = self.cost[j].clone() - f.clone() * pivot_row[j].clone();
                }
            }
        }
        self.basis[r] = c;
        Ok(())
    }

    /// Sets reduced costs for the objective `c` over the current basis.
    fn price(&mut self, c: &[T]) {
        let w = self.width();
        let mut cost: Vec<T> = (0..w).map(|j| c[j].clone()).collect();
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            let cb = c[b].clone();
            if cb.is_zero() {
                continue;
            }
            for j in 0..w {
                if !row[j].is_zero() {
                    cost[j] = cost[j].clone() - cb.clone() * row[j].clone();
                }
            }
        }
        self.cost = cost;
    }

    /// Bland's rule: smallest improving column enters; among the rows with
    /// the smallest ratio, the one whose basic variable has the smallest
    /// index leaves.
    fn run(&mut self) -> Result<Step> {
        let rhs_col = self.width();
        loop {
            let Some(c) = (0..self.width()).find(|&j| !self.barred[j] && is_neg(&self.cost[j])) else {
                return Ok(Step::Optimal);
            };
            let mut best: Option<(usize, T)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if !is_pos(&row[c]) {
                    continue;
                }
                let ratio = row[rhs_col].clone() / row[c].clone();
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let d = ratio.clone() - br.clone();
                        if is_neg(&d) || (!is_pos(&d) && self.basis[i] < self.basis[bi]) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            match best {
                None => return Ok(Step::Unbounded),
                Some((r, _)) => self.pivot(r, c)?,
            }
        }
    }
}

/// Minimizes `objective` (default: total mass of `nu`) over the program.
pub fn solve_lp<T: Scalar>(lp: &LpProgram<T>, objective: Option<&[T]>) -> Result<LpOutcome<T>> {
    let m = lp.a.len();
    let nv = lp.n_vars();
    let default_obj = lp.nu_mass_objective();
    let obj = objective.unwrap_or(&default_obj);
    if obj.len() != nv {
        return Err(Error::DimensionMismatch { what: "objective", expected: nv, found: obj.len() });
    }
    // Rows with negative right-hand side are negated so that the
    // artificial basis starts feasible.
    let sign: Vec<T> = lp.rhs.iter().map(|r| if *r < T::zero() { -T::one() } else { T::one() }).collect();
    let width = nv + m;
    let rows: Vec<Vec<T>> = (0..m)
        .map(|i| {
            let mut row: Vec<T> = lp.a[i].iter().map(|v| v.clone() * sign[i].clone()).collect();
            row.extend((0..m).map(|k| if k == i { T::one() } else { T::zero() }));
            row.push(lp.rhs[i].clone() * sign[i].clone());
            row
        })
        .collect();
    let mut t = Tableau {
        rows,
        basis: (nv..nv + m).collect(),
        cost: vec![T::zero(); width],
        barred: vec![false; width],
        pivots: 0,
    };
    let phase1: Vec<T> = (0..width).map(|j| if j < nv { T::zero() } else { T::one() }).collect();
    t.price(&phase1);
    t.run()?;
    let infeasibility = t
        .rows
        .iter()
        .zip(&t.basis)
        .filter(|(_, &b)| b >= nv)
        .fold(T::zero(), |s, (row, _)| s + row[width].clone());
    if infeasibility.is_pos_tol(1e-9) {
        let certificate = (0..m).map(|i| (T::one() - t.cost[nv + i].clone()) * sign[i].clone()).collect();
        return Ok(LpOutcome::Infeasible { certificate, pivots: t.pivots });
    }
    // Drive artificial variables out of the basis; rows where that is
    // impossible are redundant and dropped.
    let mut i = 0;
    while i < t.rows.len() {
        if t.basis[i] >= nv {
            match (0..nv).find(|&j| !t.rows[i][j].near_zero(EPS)) {
                Some(j) => t.pivot(i, j)?,
                None => {
                    t.rows.remove(i);
                    t.basis.remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }
    for j in nv..width {
        t.barred[j] = true;
    }
    let mut phase2: Vec<T> = obj.to_vec();
    phase2.extend((0..m).map(|_| T::zero()));
    t.price(&phase2);
    if let Step::Unbounded = t.run()? {
        return Ok(LpOutcome::Unbounded { pivots: t.pivots });
    }
    let mut x = vec![T::zero(); nv];
    for (row, &b) in t.rows.iter().zip(&t.basis) {
        if b < nv {
            let v = row[width].clone();
            x[b] = if !T::EXACT && v < T::zero() { T::zero() } else { v };
        }
    }
    let objective = x.iter().zip(obj).fold(T::zero(), |s, (v, c)| s + v.clone() * c.clone());
    Ok(LpOutcome::Feasible { x, objective, pivots: t.pivots })
}

/// How the positive weights `b` are spread over a truncation `{0..K}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BScheme {
    /// `b(k)` proportional to `2^{-k-1}`, renormalized over the truncation.
    Geometric,
    Uniform,
}

impl BScheme {
    pub fn weights<T: Scalar>(self, n: usize) -> Vec<T> {
        match self {
            BScheme::Uniform => vec![T::one() / T::from_int(n as i64); n],
            BScheme::Geometric => {
                let half = T::from_ratio(1, 2);
                let mut w = Vec::with_capacity(n);
                let mut v = T::one();
                for _ in 0..n {
                    v = v * half.clone();
                    w.push(v.clone());
                }
                let s = crate::scalar::sum(&w);
                w.into_iter().map(|x| x / s.clone()).collect()
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BScheme::Geometric => "geometric",
            BScheme::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Float,
    Exact,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Float => "float",
            Mode::Exact => "exact",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub k: usize,
    pub status: String,
    /// Optimal total mass of `nu`, when feasible.
    pub min_mass: Option<f64>,
    pub pivots: usize,
    pub mode: Mode,
    /// Optimal `nu`, when feasible.
    pub nu: Vec<f64>,
    /// Largest equality residual of the solution.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationStudy {
    pub scheme: BScheme,
    pub rows: Vec<TruncationRow>,
    /// Floating rows in increasing `K` have strictly increasing `min_mass`.
    pub strictly_increasing: bool,
    /// Every floating solution satisfies
    /// `nu(k) >= nu(1) prod_{j=1}^{k-1} p(j, j+1) - 1e-8`.
    pub chained_bound_holds: bool,
    /// Exact and floating solves agree on status wherever both ran.
    pub modes_agree: bool,
    /// Number of doublings of `K` whose mass increment is at
    /// least `0.5 * min nu(1) * ln(K'/K)`.
    pub log_growth_doublings: usize,
    /// The total mass diverges with `K`, so no finite `nu` exists for the
    /// untruncated chain; only claimed after four qualifying doublings.
    pub mass_diverges: bool,
}

impl TruncationStudy {
    /// `K,status,min_mass,pivots,mode` per solve.
    pub fn to_csv(&self) -> String {
        let rows = self.rows.iter().map(|r| {
            vec![
                r.k.to_string(),
                r.status.clone(),
                r.min_mass.map(|v| v.to_string()).unwrap_or_default(),
                r.pivots.to_string(),
                r.mode.name().to_string(),
            ]
        });
        crate::report::csv_table(&["K", "status", "min_mass", "pivots", "mode"], rows)
    }
}

/// Truncations up to this level are also solved in exact arithmetic.
pub const EXACT_LEVEL_CAP: usize = 20;

fn truncated_chain(model: &CountableMdp<Rational>, k: usize) -> Result<MarkovChain<Rational>> {
    let mdp = model.truncate(k)?;
    let mu = Kernel::deterministic(&mdp, &vec![0; mdp.n_states()]);
    induced_chain(&mdp, &mu)
}

fn solve_row<T: Scalar>(chain: &MarkovChain<T>, k: usize, scheme: BScheme, mode: Mode) -> Result<TruncationRow> {
    let lp = build_lp(chain, &scheme.weights::<T>(chain.n_states()))?;
    let outcome = solve_lp(&lp, None)?;
    let (min_mass, nu, residual) = match &outcome {
        LpOutcome::Feasible { x, objective, .. } => (
            Some(objective.to_f64()),
            x[lp.n_states..].iter().map(Scalar::to_f64).collect(),
            Some(lp.residual(x)),
        ),
        _ => (None, Vec::new(), None),
    };
    Ok(TruncationRow { k, status: outcome.status().to_string(), min_mass, pivots: outcome.pivots(), mode, nu, residual })
}

/// Solves `min sum nu` on the truncation of an uncontrolled countable chain
/// at each level in `ks`, and reads the growth of the optimal mass.
pub fn truncation_study(model: &CountableMdp<Rational>, ks: &[usize], scheme: BScheme) -> Result<TruncationStudy> {
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("truncation levels must be nonempty and increasing".into()));
    }
    let per_level: Vec<Result<(Vec<TruncationRow>, Vec<f64>)>> = ks
        .par_iter()
        .map(|&k| {
            let exact_chain = truncated_chain(model, k)?;
            let chain = exact_chain.to_f64();
            let mut rows = vec![solve_row(&chain, k, scheme, Mode::Float)?];
            if k <= EXACT_LEVEL_CAP {
                rows.push(solve_row(&exact_chain, k, scheme, Mode::Exact)?);
            }
            // Probability of each upward step j -> j+1 below the boundary.
            let up = (0..k).map(|j| *chain.prob(j, j + 1)).collect();
            Ok((rows, up))
        })
        .collect();
    let mut rows = Vec::new();
    let mut chained_bound_holds = true;
    let mut modes_agree = true;
    for level in per_level {
        let (level_rows, up) = level?;
        let float = &level_rows[0];
        if let Some(exact) = level_rows.get(1) {
            modes_agree &= exact.status == float.status;
        }
        if float.nu.len() > 1 {
            let mut factor = 1.0;
            for k in 1..float.nu.len() {
                if k > 1 {
                    factor *= up[k - 1];
                }
                chained_bound_holds &= float.nu[k] >= factor * float.nu[1] - 1e-8;
            }
        }
        rows.extend(level_rows);
    }
    let float_rows: Vec<&TruncationRow> = rows.iter().filter(|r| r.mode == Mode::Float).collect();
    let masses: Vec<Option<f64>> = float_rows.iter().map(|r| r.min_mass).collect();
    let strictly_increasing = masses.iter().all(Option::is_some)
        && masses.windows(2).all(|w| w[1].unwrap() > w[0].unwrap());
    let nu1 = float_rows
        .iter()
        .filter_map(|r| r.nu.get(1).cloned())
        .fold(f64::INFINITY, f64::min);
    let mut log_growth_doublings = 0;
    for w in float_rows.windows(2) {
        let (a, b) = (w[0], w[1]);
        let doubled = b.k >= 2 * a.k;
        let grew = match (a.min_mass, b.min_mass) {
            (Some(x), Some(y)) => y - x >= 0.5 * nu1 * (b.k as f64 / a.k as f64).ln(),
            _ => false,
        };
        if doubled && grew {
            log_growth_doublings += 1;
        }
    }
    Ok(TruncationStudy {
        scheme,
        rows,
        strictly_increasing,
        chained_bound_holds,
        modes_agree,
        log_growth_doublings,
        mass_diverges: strictly_increasing && log_growth_doublings >= 4,
    })
}
