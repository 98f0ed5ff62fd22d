//! MDP instances: finite models (validated, serializable), countable models
//! behind lazy generators, the drift certificate and cost-model classes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance for every stochasticity check on floating inputs.
pub const PROB_TOL: f64 = 1e-12;

/// A finite MDP with states `0..n`, per-state action lists, transition rows
/// `q(.|x,a)` and finite one-stage costs `c(x,a)`.
///
/// Actions are addressed by their index in the state's list; the labels are
/// kept for reports and serialization. Rows are stored sparsely, sorted by
/// successor with zero entries dropped.
#[derive(Clone, PartialEq)]
pub struct FiniteMdp<T = f64> {
    actions: Vec<Vec<String>>,
    q: Vec<Vec<Vec<(usize, T)>>>,
    c: Vec<Vec<T>>,
}

impl<T: Scalar> fmt::Debug for FiniteMdp<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteMdp")
            .field("n_states", &self.n_states())
            .field("actions", &self.actions)
            .finish()
    }
}

impl<T: Scalar> FiniteMdp<T> {
    /// Builds an MDP from dense rows `q[x][a][y]` and costs `c[x][a]`.
    pub fn new(actions: Vec<Vec<String>>, q: Vec<Vec<Vec<T>>>, c: Vec<Vec<T>>) -> Result<Self> {
        let n = actions.len();
        let mut sparse = Vec::with_capacity(n);
        for rows in q {
            let mut out = Vec::with_capacity(rows.len());
            for row in rows {
                if row.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "transition row",
                        expected: n,
                        found: row.len(),
                    });
                }
                out.push(row.into_iter().enumerate().collect());
            }
            sparse.push(out);
        }
        Self::from_sparse(actions, sparse, c)
    }

    /// Builds an MDP from sparse rows `q[x][a] = [(y, p), ...]`.
    pub fn from_sparse(
        actions: Vec<Vec<String>>,
        q: Vec<Vec<Vec<(usize, T)>>>,
        c: Vec<Vec<T>>,
    ) -> Result<Self> {
        let n = actions.len();
        if n == 0 {
            return Err(Error::InvalidArgument("an MDP needs at least one state".into()));
        }
        if q.len() != n {
            return Err(Error::DimensionMismatch { what: "transition table", expected: n, found: q.len() });
        }
        if c.len() != n {
            return Err(Error::DimensionMismatch { what: "cost table", expected: n, found: c.len() });
        }
        let mut rows_out = Vec::with_capacity(n);
        for x in 0..n {
            let m = actions[x].len();
            if m == 0 {
                return Err(Error::EmptyActionSet(x));
            }
            if q[x].len() != m {
                return Err(Error::DimensionMismatch { what: "actions at state", expected: m, found: q[x].len() });
            }
            if c[x].len() != m {
                return Err(Error::DimensionMismatch { what: "costs at state", expected: m, found: c[x].len() });
            }
            let mut state_rows = Vec::with_capacity(m);
            for a in 0..m {
                if !c[x][a].is_finite_value() {
                    return Err(Error::NonFiniteCost { state: x, action: a });
                }
                let mut merged: BTreeMap<usize, T> = BTreeMap::new();
                for (y, p) in &q[x][a] {
                    if *y >= n {
                        return Err(Error::DimensionMismatch { what: "successor index", expected: n, found: *y });
                    }
                    if !p.is_finite_value() || *p < T::zero() {
                        return Err(Error::NegativeProbability { state: x, action: a, value: p.to_f64() });
                    }
                    let e = merged.entry(*y).or_insert_with(T::zero);
                    *e = e.clone() + p.clone();
                }
                let row: Vec<(usize, T)> = merged.into_iter().filter(|(_, p)| !p.is_zero()).collect();
                check_row_sum(row.iter().map(|(_, p)| p), x, a)?;
                state_rows.push(row);
            }
            rows_out.push(state_rows);
        }
        Ok(FiniteMdp { actions, q: rows_out, c })
    }

    pub fn n_states(&self) -> usize {
        self.actions.len()
    }

    pub fn n_actions(&self, x: usize) -> usize {
        self.actions[x].len()
    }

    /// Largest action count over all states.
    pub fn max_actions(&self) -> usize {
        self.actions.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn action_labels(&self, x: usize) -> &[String] {
        &self.actions[x]
    }

    /// Sparse transition row `q(.|x,a)`.
    pub fn row(&self, x: usize, a: usize) -> &[(usize, T)] {
        &self.q[x][a]
    }

    pub fn prob(&self, x: usize, a: usize, y: usize) -> T {
        self.q[x][a]
            .binary_search_by_key(&y, |(s, _)| *s)
            .map(|i| self.q[x][a][i].1.clone())
            .unwrap_or_else(|_| T::zero())
    }

    pub fn cost(&self, x: usize, a: usize) -> &T {
        &self.c[x][a]
    }

    pub fn costs(&self) -> &[Vec<T>] {
        &self.c
    }

    /// Number of deterministic stationary policies, as a float to avoid
    /// overflow.
    pub fn deterministic_policy_count(&self) -> f64 {
        self.actions.iter().map(|a| a.len() as f64).product()
    }

    /// Successors of `x` under any action.
    pub fn successors(&self, x: usize) -> BTreeSet<usize> {
        self.q[x].iter().flat_map(|r| r.iter().map(|(y, _)| *y)).collect()
    }

    /// Expectation of `f` under `q(.|x,a)`.
    pub fn expect(&self, x: usize, a: usize, f: &[T]) -> T {
        self.q[x][a]
            .iter()
            .fold(T::zero(), |acc, (y, p)| acc + p.clone() * f[*y].clone())
    }

    /// Same MDP with cost table replaced.
    pub fn with_costs(&self, c: Vec<Vec<T>>) -> Result<Self> {
        Self::from_sparse(self.actions.clone(), self.q.clone(), c)
    }

    pub fn to_f64(&self) -> FiniteMdp<f64> {
        FiniteMdp {
            actions: self.actions.clone(),
            q: self
                .q
                .iter()
                .map(|rows| {
                    rows.iter()
                        .map(|r| r.iter().map(|(y, p)| (*y, p.to_f64())).collect())
                        .collect()
                })
                .collect(),
            c: self
                .c
                .iter()
                .map(|r| r.iter().map(Scalar::to_f64).collect())
                .collect(),
        }
    }

    /// Serializes into the JSON document schema. Exact models write
    /// probabilities and costs as `"p/q"` strings.
    pub fn to_document(&self) -> MdpDocument {
        let lit = |v: &T| {
            if T::EXACT {
                NumLit::Text(v.to_literal())
            } else {
                NumLit::Number(v.to_f64())
            }
        };
        let n = self.n_states();
        let mut q = BTreeMap::new();
        let mut c = BTreeMap::new();
        for x in 0..n {
            for (a, label) in self.actions[x].iter().enumerate() {
                let key = format!("{},{}", x, label);
                let mut dense = vec![T::zero(); n];
                for (y, p) in &self.q[x][a] {
                    dense[*y] = p.clone();
                }
                q.insert(key.clone(), dense.iter().map(lit).collect());
                c.insert(key, lit(&self.c[x][a]));
            }
        }
        MdpDocument {
            n_states: n,
            actions: self
                .actions
                .iter()
                .map(|acts| acts.iter().cloned().map(ActionLabel::Name).collect())
                .collect(),
            q,
            c,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("document serializes")
    }
}

fn check_row_sum<'a, T: Scalar>(probs: impl Iterator<Item = &'a T>, x: usize, a: usize) -> Result<()> {
    let sum = probs.fold(T::zero(), |acc, p| acc + p.clone());
    let dev = sum.clone() - T::one();
    let ok = if T::EXACT { dev.is_zero() } else { dev.to_f64().abs() <= PROB_TOL };
    if ok {
        Ok(())
    } else {
        Err(Error::RowSum { state: x, action: a, sum: sum.to_f64() })
    }
}

/// Number literal in a model document: a JSON number or a string such as
/// `"1/3"` or `"0.125"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumLit {
    Number(f64),
    Text(String),
}

impl NumLit {
    fn parse<T: Scalar>(&self) -> Result<T> {
        match self {
            NumLit::Number(v) => Ok(T::from_f64_lossy(*v)),
            NumLit::Text(s) => T::parse_literal(s).ok_or_else(|| Error::Parse(format!("bad number literal {:?}", s))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActionLabel {
    Index(u64),
    Name(String),
}

impl ActionLabel {
    fn into_string(self) -> String {
        match self {
            ActionLabel::Index(i) => i.to_string(),
            ActionLabel::Name(s) => s,
        }
    }
}

/// On-disk MDP document. Keys of `q` and `c` are `"x,a"` with `x` the state
/// index and `a` the action label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub n_states: usize,
    pub actions: Vec<Vec<ActionLabel>>,
    pub q: BTreeMap<String, Vec<NumLit>>,
    pub c: BTreeMap<String, NumLit>,
}

/// Parses and validates a JSON model document.
pub fn parse_mdp<T: Scalar>(json: &str) -> Result<FiniteMdp<T>> {
    let doc: MdpDocument = serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    validate_mdp(doc)
}

/// Turns a parsed document into a validated [`FiniteMdp`].
pub fn validate_mdp<T: Scalar>(doc: MdpDocument) -> Result<FiniteMdp<T>> {
    let n = doc.n_states;
    if doc.actions.len() != n {
        return Err(Error::DimensionMismatch { what: "actions list", expected: n, found: doc.actions.len() });
    }
    let actions: Vec<Vec<String>> = doc
        .actions
        .into_iter()
        .map(|acts| acts.into_iter().map(ActionLabel::into_string).collect())
        .collect();
    for (x, acts) in actions.iter().enumerate() {
        if acts.is_empty() {
            return Err(Error::EmptyActionSet(x));
        }
        let unique: BTreeSet<&String> = acts.iter().collect();
        if unique.len() != acts.len() {
            return Err(Error::Parse(format!("duplicate action label at state {}", x)));
        }
    }
    let mut index: BTreeMap<(usize, &str), usize> = BTreeMap::new();
    for (x, acts) in actions.iter().enumerate() {
        for (a, label) in acts.iter().enumerate() {
            index.insert((x, label.as_str()), a);
        }
    }
    let lookup = |key: &str| -> Result<(usize, usize)> {
        let (xs, label) = key
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("key {:?} is not of the form \"x,a\"", key)))?;
        let x: usize = xs.trim().parse().map_err(|_| Error::Parse(format!("bad state in key {:?}", key)))?;
        index
            .get(&(x, label.trim()))
            .map(|a| (x, *a))
            .ok_or_else(|| Error::Parse(format!("key {:?} names no admissible pair", key)))
    };

    let mut q: Vec<Vec<Option<Vec<(usize, T)>>>> = actions.iter().map(|a| vec![None; a.len()]).collect();
    let mut c: Vec<Vec<Option<T>>> = actions.iter().map(|a| vec![None; a.len()]).collect();
    for (key, row) in &doc.q {
        let (x, a) = lookup(key)?;
        if row.len() != n {
            return Err(Error::DimensionMismatch { what: "transition row", expected: n, found: row.len() });
        }
        let parsed = row
            .iter()
            .enumerate()
            .map(|(y, v)| v.parse::<T>().map(|p| (y, p)))
            .collect::<Result<Vec<_>>>()?;
        q[x][a] = Some(parsed);
    }
    for (key, v) in &doc.c {
        let (x, a) = lookup(key)?;
        if let NumLit::Number(f) = v {
            if !f.is_finite() {
                return Err(Error::NonFiniteCost { state: x, action: a });
            }
        }
        c[x][a] = Some(v.parse::<T>()?);
    }
    let q = q
        .into_iter()
        .enumerate()
        .map(|(x, rows)| {
            rows.into_iter()
                .enumerate()
                .map(|(a, r)| r.ok_or_else(|| Error::Parse(format!("missing q entry for ({},{})", x, actions[x][a]))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let c = c
        .into_iter()
        .enumerate()
        .map(|(x, row)| {
            row.into_iter()
                .enumerate()
                .map(|(a, v)| v.ok_or_else(|| Error::Parse(format!("missing c entry for ({},{})", x, actions[x][a]))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    FiniteMdp::from_sparse(actions, q, c)
}

type KernelFn<T> = dyn Fn(usize, usize) -> Vec<(usize, T)> + Send + Sync;
type CostFn<T> = dyn Fn(usize, usize) -> T + Send + Sync;
type ActionSetFn = dyn Fn(usize) -> Vec<String> + Send + Sync;

/// A countable-state MDP on `{0, 1, 2, ...}` given by lazy generators.
#[derive(Clone)]
pub struct CountableMdp<T = f64> {
    kernel: Arc<KernelFn<T>>,
    cost: Arc<CostFn<T>>,
    action_set: Arc<ActionSetFn>,
}

impl<T: Scalar> fmt::Debug for CountableMdp<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CountableMdp { .. }")
    }
}

impl<T: Scalar> CountableMdp<T> {
    pub fn new(
        kernel: impl Fn(usize, usize) -> Vec<(usize, T)> + Send + Sync + 'static,
        cost: impl Fn(usize, usize) -> T + Send + Sync + 'static,
        action_set: impl Fn(usize) -> Vec<String> + Send + Sync + 'static,
    ) -> Self {
        CountableMdp { kernel: Arc::new(kernel), cost: Arc::new(cost), action_set: Arc::new(action_set) }
    }

    /// Uncontrolled chain: a single action `"0"` everywhere.
    pub fn uncontrolled(
        kernel: impl Fn(usize) -> Vec<(usize, T)> + Send + Sync + 'static,
        cost: impl Fn(usize) -> T + Send + Sync + 'static,
    ) -> Self {
        Self::new(move |k, _| kernel(k), move |k, _| cost(k), |_| vec!["0".to_string()])
    }

    pub fn actions(&self, k: usize) -> Vec<String> {
        (self.action_set)(k)
    }

    pub fn cost(&self, k: usize, a: usize) -> T {
        (self.cost)(k, a)
    }

    /// Validated transition distribution from `k` under action `a`.
    pub fn transition(&self, k: usize, a: usize) -> Result<Vec<(usize, T)>> {
        let row = (self.kernel)(k, a);
        for (_, p) in &row {
            if *p < T::zero() {
                return Err(Error::NegativeProbability { state: k, action: a, value: p.to_f64() });
            }
        }
        check_row_sum(row.iter().map(|(_, p)| p), k, a)?;
        Ok(row)
    }

    /// Finite truncation on `{0..=level}`: mass leaving to states above
    /// `level` is redirected to `level` itself; costs are kept.
    pub fn truncate(&self, level: usize) -> Result<FiniteMdp<T>> {
        let n = level + 1;
        let mut actions = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        for k in 0..n {
            let acts = self.actions(k);
            let mut rows = Vec::with_capacity(acts.len());
            let mut costs = Vec::with_capacity(acts.len());
            for a in 0..acts.len() {
                let row = self
                    .transition(k, a)?
                    .into_iter()
                    .map(|(y, p)| (y.min(level), p))
                    .collect::<Vec<_>>();
                rows.push(row);
                costs.push(self.cost(k, a));
            }
            actions.push(acts);
            q.push(rows);
            c.push(costs);
        }
        FiniteMdp::from_sparse(actions, q, c)
    }
}

/// Weights and constants of the drift condition
/// `sup_a E[w(x_1) | x, a] <= beta w(x) + b`, `sup_a c^+(x,a) <= w(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCertificate {
    pub w: Vec<f64>,
    pub beta: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// `beta w(x) + b - sup_a E[w(x_1)|x,a]` per state.
    pub drift_slack: Vec<f64>,
    /// `w(x) - sup_a c^+(x,a)` per state.
    pub cost_slack: Vec<f64>,
    pub verdict: bool,
    /// `b / (1 - beta)`, an upper bound on every optimal average cost; only
    /// reported when the certificate holds.
    pub gain_upper_bound: Option<f64>,
}

const DRIFT_TOL: f64 = 1e-12;

pub fn check_drift(mdp: &FiniteMdp<f64>, cert: &DriftCertificate) -> Result<DriftReport> {
    let n = mdp.n_states();
    if cert.w.len() != n {
        return Err(Error::DimensionMismatch { what: "drift weights", expected: n, found: cert.w.len() });
    }
    if !(0.0..1.0).contains(&cert.beta) || cert.b < 0.0 || cert.w.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "drift certificate needs w >= 0, beta in [0,1), b >= 0".into(),
        ));
    }
    let mut drift_slack = Vec::with_capacity(n);
    let mut cost_slack = Vec::with_capacity(n);
    for x in 0..n {
        let sup_next = (0..mdp.n_actions(x))
            .map(|a| mdp.expect(x, a, &cert.w))
            .fold(f64::NEG_INFINITY, f64::max);
        let sup_cost = (0..mdp.n_actions(x))
            .map(|a| mdp.cost(x, a).max(0.0))
            .fold(f64::NEG_INFINITY, f64::max);
        drift_slack.push(cert.beta * cert.w[x] + cert.b - sup_next);
        cost_slack.push(cert.w[x] - sup_cost);
    }
    let verdict = drift_slack.iter().chain(&cost_slack).all(|s| *s >= -DRIFT_TOL);
    Ok(DriftReport {
        drift_slack,
        cost_slack,
        verdict,
        gain_upper_bound: verdict.then(|| cert.b / (1.0 - cert.beta)),
    })
}

/// Model class in the sense of which part of the accumulated cost is finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostModelClass {
    /// The negative part is finite (costs bounded below).
    AcPlus,
    /// The positive part is finite (costs bounded above).
    AcMinus,
    Both,
}

/// One-stage cost that may carry an infinite sentinel; only used for
/// classification of truncations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExtCost {
    Finite(f64),
    PosInf,
    NegInf,
}

/// Finite models with finite costs belong to both classes.
pub fn classify_cost_model<T: Scalar>(_mdp: &FiniteMdp<T>) -> CostModelClass {
    CostModelClass::Both
}

pub fn classify_costs(costs: &[Vec<ExtCost>]) -> Result<CostModelClass> {
    let flat = costs.iter().flatten();
    let pos = flat.clone().any(|c| matches!(c, ExtCost::PosInf));
    let neg = flat.clone().any(|c| matches!(c, ExtCost::NegInf));
    if flat.clone().any(|c| matches!(c, ExtCost::Finite(v) if !v.is_finite())) {
        return Err(Error::InvalidArgument("finite cost entries must be finite numbers".into()));
    }
    match (pos, neg) {
        (false, false) => Ok(CostModelClass::Both),
        (true, false) => Ok(CostModelClass::AcPlus),
        (false, true) => Ok(CostModelClass::AcMinus),
        (true, true) => Err(Error::BothSignsUnbounded),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rational;

    fn labels(n: usize, m: usize) -> Vec<Vec<String>> {
        (0..n).map(|_| (0..m).map(|a| a.to_string()).collect()).collect()
    }

    #[test]
    fn degenerate_absorbing_mdp_is_valid() {
        let doc = r#"{"n_states":1,"actions":[["stay"]],"q":{"0,stay":[1]},"c":{"0,stay":0}}"#;
        let mdp: FiniteMdp = parse_mdp(doc).unwrap();
        assert_eq!(mdp.n_states(), 1);
        assert_eq!(mdp.prob(0, 0, 0), 1.0);
        assert_eq!(*mdp.cost(0, 0), 0.0);
    }

    #[test]
    fn short_row_is_rejected() {
        let doc = r#"{"n_states":2,"actions":[["a"],["a"]],"q":{"0,a":[0.5,0.4],"1,a":[0,1]},"c":{"0,a":0,"1,a":0}}"#;
        match parse_mdp::<f64>(doc) {
            Err(Error::RowSum { state: 0, action: 0, sum }) => assert!((sum - 0.9).abs() < 1e-15),
            other => panic!("unexpected {:?}", other),
        }
        assert!(matches!(parse_mdp::<Rational>(doc), Err(Error::RowSum { .. })));
    }

    #[test]
    fn structural_errors() {
        let empty = r#"{"n_states":1,"actions":[[]],"q":{},"c":{}}"#;
        assert_eq!(parse_mdp::<f64>(empty).unwrap_err(), Error::EmptyActionSet(0));
        let unknown = r#"{"n_states":1,"actions":[["a"]],"q":{"0,a":[1]},"c":{"0,a":0},"extra":1}"#;
        assert!(matches!(parse_mdp::<f64>(unknown), Err(Error::Parse(_))));
        let missing = r#"{"n_states":1,"actions":[["a"]],"q":{"0,a":[1]},"c":{}}"#;
        assert!(matches!(parse_mdp::<f64>(missing), Err(Error::Parse(_))));
        let stray = r#"{"n_states":1,"actions":[["a"]],"q":{"0,a":[1],"0,b":[1]},"c":{"0,a":0}}"#;
        assert!(matches!(parse_mdp::<f64>(stray), Err(Error::Parse(_))));
        let negative = r#"{"n_states":2,"actions":[["a"],["a"]],"q":{"0,a":[1.5,-0.5],"1,a":[0,1]},"c":{"0,a":0,"1,a":0}}"#;
        assert!(matches!(parse_mdp::<f64>(negative), Err(Error::NegativeProbability { .. })));
        let nan_cost = FiniteMdp::new(labels(1, 1), vec![vec![vec![1.0]]], vec![vec![f64::NAN]]);
        assert_eq!(nan_cost.unwrap_err(), Error::NonFiniteCost { state: 0, action: 0 });
    }

    #[test]
    fn rational_literals_and_round_trip() {
        let doc = r#"{"n_states":2,"actions":[[0,1],["x"]],
            "q":{"0,0":["1/3","2/3"],"0,1":[0.1,0.9],"1,x":[1,0]},
            "c":{"0,0":"1/2","0,1":2,"1,x":-1}}"#;
        let exact: FiniteMdp<Rational> = parse_mdp(doc).unwrap();
        assert_eq!(exact.prob(0, 0, 0), Rational::from_ratio(1, 3));
        assert_eq!(exact.prob(0, 1, 0), Rational::from_ratio(1, 10));
        let again: FiniteMdp<Rational> = parse_mdp(&exact.to_json()).unwrap();
        assert_eq!(again, exact);
        let float: FiniteMdp<f64> = parse_mdp(doc).unwrap();
        let again: FiniteMdp<f64> = parse_mdp(&float.to_json()).unwrap();
        assert_eq!(again, float);
    }

    fn harmonic_absorbing() -> CountableMdp<f64> {
        CountableMdp::uncontrolled(
            |k| {
                if k == 0 {
                    vec![(0, 1.0)]
                } else {
                    let beta = 1.0 / (k as f64 + 1.0);
                    vec![(0, beta), (k + 1, 1.0 - beta)]
                }
            },
            |k| k as f64,
        )
    }

    #[test]
    fn truncation_redirects_escaping_mass() {
        let mdp = harmonic_absorbing().truncate(10).unwrap();
        assert_eq!(mdp.n_states(), 11);
        for x in 0..11 {
            let s: f64 = mdp.row(x, 0).iter().map(|(_, p)| p).sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
        assert!((mdp.prob(10, 0, 10) - 10.0 / 11.0).abs() < 1e-15);
        assert!((mdp.prob(10, 0, 0) - 1.0 / 11.0).abs() < 1e-15);
        assert!((mdp.prob(3, 0, 4) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn drift_certificates() {
        let zero = FiniteMdp::new(labels(2, 1), vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]], vec![vec![0.0], vec![0.0]]).unwrap();
        let r = check_drift(&zero, &DriftCertificate { w: vec![0.0, 0.0], beta: 0.0, b: 0.0 }).unwrap();
        assert!(r.verdict);
        assert_eq!(r.gain_upper_bound, Some(0.0));

        // c(k) = k, w(k) = k: E[w(x_1)|k] = k, so k <= beta k + b fails for large k.
        let mdp = harmonic_absorbing().truncate(10).unwrap();
        let w: Vec<f64> = (0..11).map(|k| k as f64).collect();
        let r = check_drift(&mdp, &DriftCertificate { w: w.clone(), beta: 0.5, b: 1.0 }).unwrap();
        assert!(!r.verdict);
        assert!(r.gain_upper_bound.is_none());
        for k in 1..10 {
            // independent arithmetic: E[w(x_1)|k] = (k/(k+1))(k+1) = k
            let expected = 0.5 * k as f64 + 1.0 - k as f64;
            assert!((r.drift_slack[k] - expected).abs() < 1e-12);
        }
        assert!(r.drift_slack[3] < 0.0);

        let bounded = zero.with_costs(vec![vec![-3.0], vec![2.0]]).unwrap();
        let r = check_drift(&bounded, &DriftCertificate { w: vec![3.0, 3.0], beta: 0.0, b: 3.0 }).unwrap();
        assert!(r.verdict);
        assert_eq!(r.gain_upper_bound, Some(3.0));

        assert!(matches!(
            check_drift(&bounded, &DriftCertificate { w: vec![1.0], beta: 0.0, b: 0.0 }),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cost_model_classes() {
        let mdp = harmonic_absorbing().truncate(3).unwrap();
        assert_eq!(classify_cost_model(&mdp), CostModelClass::Both);
        let plus = vec![vec![ExtCost::Finite(1.0)], vec![ExtCost::PosInf]];
        assert_eq!(classify_costs(&plus).unwrap(), CostModelClass::AcPlus);
        let minus = vec![vec![ExtCost::NegInf]];
        assert_eq!(classify_costs(&minus).unwrap(), CostModelClass::AcMinus);
        let both = vec![vec![ExtCost::NegInf, ExtCost::PosInf]];
        assert_eq!(classify_costs(&both).unwrap_err(), Error::BothSignsUnbounded);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn small_mdp() -> impl Strategy<Value = FiniteMdp<f64>> {
            (1usize..4, 1usize..3).prop_flat_map(|(n, m)| {
                let row = proptest::collection::vec(1u32..5, n);
                (
                    proptest::collection::vec(proptest::collection::vec(row, m), n),
                    proptest::collection::vec(proptest::collection::vec(-5i32..5, m), n),
                )
                    .prop_map(move |(q, c)| {
                        let q = q
                            .into_iter()
                            .map(|rows| {
                                rows.into_iter()
                                    .map(|r| {
                                        let s: u32 = r.iter().sum();
                                        r.into_iter().map(|v| v as f64 / s as f64).collect::<Vec<_>>()
                                    })
                                    .collect()
                            })
                            .collect::<Vec<Vec<Vec<f64>>>>();
                        let c = c.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
                        FiniteMdp::new(labels(n, m), q, c).unwrap()
                    })
            })
        }

        proptest! {
            #[test]
            fn json_round_trip(mdp in small_mdp()) {
                let back: FiniteMdp<f64> = parse_mdp(&mdp.to_json()).unwrap();
                prop_assert_eq!(back, mdp);
            }

            #[test]
            fn drift_verdict_survives_scaling(t in 1.0f64..10.0, mdp in small_mdp()) {
                let n = mdp.n_states();
                let sup = mdp.costs().iter().flatten().fold(0.0f64, |m, c| m.max(c.abs()));
                let cert = DriftCertificate { w: vec![sup; n], beta: 0.0, b: sup };
                prop_assert!(check_drift(&mdp, &cert).unwrap().verdict);
                let scaled = DriftCertificate { w: vec![sup * t; n], beta: 0.0, b: sup * t };
                prop_assert!(check_drift(&mdp, &scaled).unwrap().verdict);
            }
        }
    }
}
