//! Randomized policies. Action distributions are always indexed by the
//! position of the action in the state's admissible list, so a kernel row
//! can only charge admissible actions.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, PROB_TOL};
use crate::scalar::Scalar;

/// A stationary stochastic kernel: `rows[x][a]` is the probability of the
/// `a`-th admissible action at `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel<T = f64> {
    pub rows: Vec<Vec<T>>,
}

impl<T: Scalar> Kernel<T> {
    pub fn new(rows: Vec<Vec<T>>) -> Self {
        Kernel { rows }
    }

    /// Point masses on `choice[x]`.
    pub fn deterministic<U: Scalar>(mdp: &FiniteMdp<U>, choice: &[usize]) -> Self {
        let rows = (0..mdp.n_states())
            .map(|x| {
                let mut r = vec![T::zero(); mdp.n_actions(x)];
                r[choice[x]] = T::one();
                r
            })
            .collect();
        Kernel { rows }
    }

    /// Uniform over the admissible actions; the default kernel for
    /// uncharged states.
    pub fn uniform<U: Scalar>(mdp: &FiniteMdp<U>) -> Self {
        let rows = (0..mdp.n_states()).map(|x| uniform_row(mdp.n_actions(x))).collect();
        Kernel { rows }
    }

    pub fn dist(&self, x: usize) -> &[T] {
        &self.rows[x]
    }

    pub fn validate<U: Scalar>(&self, mdp: &FiniteMdp<U>) -> Result<()> {
        if self.rows.len() != mdp.n_states() {
            return Err(Error::DimensionMismatch {
                what: "policy kernel",
                expected: mdp.n_states(),
                found: self.rows.len(),
            });
        }
        for (x, row) in self.rows.iter().enumerate() {
            check_action_dist(row, mdp.n_actions(x), x)?;
        }
        Ok(())
    }

    /// The action chosen with certainty at every state, if the kernel is
    /// deterministic.
    pub fn as_deterministic(&self) -> Option<Vec<usize>> {
        self.rows
            .iter()
            .map(|r| r.iter().position(|p| p.is_one()).filter(|_| r.iter().filter(|p| !p.is_zero()).count() == 1))
            .collect()
    }

    pub fn to_f64(&self) -> Kernel<f64> {
        Kernel { rows: self.rows.iter().map(|r| r.iter().map(Scalar::to_f64).collect()).collect() }
    }
}

pub(crate) fn uniform_row<T: Scalar>(m: usize) -> Vec<T> {
    vec![T::one() / T::from_int(m as i64); m]
}

/// Checks that `row` is a probability distribution over `m` actions.
pub(crate) fn check_action_dist<T: Scalar>(row: &[T], m: usize, x: usize) -> Result<()> {
    if row.len() != m {
        return Err(Error::PolicySupport {
            state: x,
            detail: format!("{} probabilities for {} admissible actions", row.len(), m),
        });
    }
    if let Some(p) = row.iter().find(|p| **p < T::zero() || !p.is_finite_value()) {
        return Err(Error::PolicySupport { state: x, detail: format!("invalid probability {}", p) });
    }
    let s = crate::scalar::sum(row);
    let dev = s.clone() - T::one();
    let ok = if T::EXACT { dev.is_zero() } else { dev.to_f64().abs() <= PROB_TOL };
    if !ok {
        return Err(Error::PolicySupport { state: x, detail: format!("mass {} on admissible actions", s) });
    }
    Ok(())
}

/// What a Markov policy does after its explicit prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MarkovTail<T = f64> {
    Stationary(Kernel<T>),
    /// Repeats the kernels cyclically.
    Periodic(Vec<Kernel<T>>),
}

/// A Markov policy `(mu_0, mu_1, ...)`: an explicit prefix followed by a
/// stationary or periodic tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovPolicy<T = f64> {
    pub prefix: Vec<Kernel<T>>,
    pub tail: MarkovTail<T>,
}

impl<T: Scalar> MarkovPolicy<T> {
    pub fn stationary(kernel: Kernel<T>) -> Self {
        MarkovPolicy { prefix: Vec::new(), tail: MarkovTail::Stationary(kernel) }
    }

    pub fn eventually_stationary(prefix: Vec<Kernel<T>>, tail: Kernel<T>) -> Self {
        MarkovPolicy { prefix, tail: MarkovTail::Stationary(tail) }
    }

    pub fn periodic(prefix: Vec<Kernel<T>>, cycle: Vec<Kernel<T>>) -> Self {
        assert!(!cycle.is_empty(), "periodic tail needs at least one kernel");
        MarkovPolicy { prefix, tail: MarkovTail::Periodic(cycle) }
    }

    pub fn kernel_at(&self, n: usize) -> &Kernel<T> {
        if n < self.prefix.len() {
            return &self.prefix[n];
        }
        match &self.tail {
            MarkovTail::Stationary(k) => k,
            MarkovTail::Periodic(cycle) => &cycle[(n - self.prefix.len()) % cycle.len()],
        }
    }

    /// Stage from which the policy is stationary, with its tail kernel.
    pub fn stationary_tail(&self) -> Option<(usize, &Kernel<T>)> {
        match &self.tail {
            MarkovTail::Stationary(k) => Some((self.prefix.len(), k)),
            MarkovTail::Periodic(cycle) if cycle.len() == 1 => Some((self.prefix.len(), &cycle[0])),
            MarkovTail::Periodic(_) => None,
        }
    }

    pub fn validate<U: Scalar>(&self, mdp: &FiniteMdp<U>) -> Result<()> {
        for k in &self.prefix {
            k.validate(mdp)?;
        }
        match &self.tail {
            MarkovTail::Stationary(k) => k.validate(mdp),
            MarkovTail::Periodic(cycle) => cycle.iter().try_for_each(|k| k.validate(mdp)),
        }
    }
}

type HistoryRule<T> = dyn Fn(&[(usize, usize)], usize) -> Vec<T> + Send + Sync;

/// A history-dependent policy on a finite horizon: `rule(past, x_n)` gives
/// the action distribution at stage `n = past.len()` given the past
/// state-action pairs. Stages beyond the horizon use the uniform kernel.
#[derive(Clone)]
pub struct HistoryPolicy<T = f64> {
    pub horizon: usize,
    rule: Arc<HistoryRule<T>>,
}

impl<T> fmt::Debug for HistoryPolicy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HistoryPolicy").field("horizon", &self.horizon).finish_non_exhaustive()
    }
}

impl<T: Scalar> HistoryPolicy<T> {
    pub fn new(horizon: usize, rule: impl Fn(&[(usize, usize)], usize) -> Vec<T> + Send + Sync + 'static) -> Self {
        HistoryPolicy { horizon, rule: Arc::new(rule) }
    }

    /// Lookup-table policy; histories missing from the table get the uniform
    /// kernel over `n_actions[x]` actions.
    pub fn from_table(
        horizon: usize,
        n_actions: Vec<usize>,
        table: HashMap<(Vec<(usize, usize)>, usize), Vec<T>>,
    ) -> Self {
        HistoryPolicy::new(horizon, move |past, x| {
            table
                .get(&(past.to_vec(), x))
                .cloned()
                .unwrap_or_else(|| uniform_row(n_actions[x]))
        })
    }

    pub fn decide(&self, past: &[(usize, usize)], x: usize, n_actions: usize) -> Vec<T> {
        if past.len() > self.horizon {
            uniform_row(n_actions)
        } else {
            (self.rule)(past, x)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    Stationary,
    SemiStationary,
    Markov,
    SemiMarkov,
    HistoryFiniteHorizon,
}

/// Any of the supported policy classes.
#[derive(Debug, Clone)]
pub enum Policy<T = f64> {
    Stationary(Kernel<T>),
    /// One stationary kernel per initial state.
    SemiStationary(Vec<Kernel<T>>),
    Markov(MarkovPolicy<T>),
    /// One Markov policy per initial state.
    SemiMarkov(Vec<MarkovPolicy<T>>),
    History(HistoryPolicy<T>),
}

impl<T: Scalar> Policy<T> {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Stationary(_) => PolicyKind::Stationary,
            Policy::SemiStationary(_) => PolicyKind::SemiStationary,
            Policy::Markov(_) => PolicyKind::Markov,
            Policy::SemiMarkov(_) => PolicyKind::SemiMarkov,
            Policy::History(_) => PolicyKind::HistoryFiniteHorizon,
        }
    }

    /// Checks every stored kernel against the admissible action sets.
    /// History rules are checked when they are evaluated.
    pub fn validate<U: Scalar>(&self, mdp: &FiniteMdp<U>) -> Result<()> {
        let per_initial = |len: usize| {
            if len == mdp.n_states() {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what: "per-initial-state policies", expected: mdp.n_states(), found: len })
            }
        };
        match self {
            Policy::Stationary(k) => k.validate(mdp),
            Policy::SemiStationary(ks) => {
                per_initial(ks.len())?;
                ks.iter().try_for_each(|k| k.validate(mdp))
            }
            Policy::Markov(m) => m.validate(mdp),
            Policy::SemiMarkov(ms) => {
                per_initial(ms.len())?;
                ms.iter().try_for_each(|m| m.validate(mdp))
            }
            Policy::History(_) => Ok(()),
        }
    }

    /// The Markov policy followed when the initial state is `x0`, for every
    /// class except history-dependent policies.
    pub fn markov_view(&self, x0: usize) -> Option<Cow<'_, MarkovPolicy<T>>> {
        match self {
            Policy::Stationary(k) => Some(Cow::Owned(MarkovPolicy::stationary(k.clone()))),
            Policy::SemiStationary(ks) => Some(Cow::Owned(MarkovPolicy::stationary(ks[x0].clone()))),
            Policy::Markov(m) => Some(Cow::Borrowed(m)),
            Policy::SemiMarkov(ms) => Some(Cow::Borrowed(&ms[x0])),
            Policy::History(_) => None,
        }
    }

    pub fn needs_history(&self) -> bool {
        matches!(self, Policy::History(_))
    }

    /// Action distribution at stage `past.len()`, given the past pairs and
    /// the current state.
    pub fn action_dist(&self, past: &[(usize, usize)], x: usize, n_actions: usize) -> Cow<'_, [T]> {
        let n = past.len();
        let x0 = past.first().map(|p| p.0).unwrap_or(x);
        match self {
            Policy::Stationary(k) => Cow::Borrowed(k.dist(x)),
            Policy::SemiStationary(ks) => Cow::Borrowed(ks[x0].dist(x)),
            Policy::Markov(m) => Cow::Borrowed(m.kernel_at(n).dist(x)),
            Policy::SemiMarkov(ms) => Cow::Borrowed(ms[x0].kernel_at(n).dist(x)),
            Policy::History(h) => Cow::Owned(h.decide(past, x, n_actions)),
        }
    }
}
