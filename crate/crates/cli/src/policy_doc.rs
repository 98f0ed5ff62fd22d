//! Policy documents accepted by `evaluate`, `simulate` and `analyze`.
//!
//! ```json
//! {"kind": "deterministic", "actions": ["order", 0, "wait"]}
//! {"kind": "stationary", "rows": [[0.5, 0.5], [1.0], ["1/3", "2/3"]]}
//! {"kind": "eventually_stationary", "prefix": [ROWS, ...], "tail": ROWS}
//! {"kind": "periodic", "prefix": [ROWS, ...], "cycle": [ROWS, ...]}
//! ```
//!
//! Rows list one probability per action, in the order of the model's
//! `actions` entry for that state.

use acmdp::mdp::{ActionLabel, NumLit};
use acmdp::{Error, FiniteMdp, Kernel, MarkovPolicy, Policy, Result, Scalar};
use serde::Deserialize;

type Rows = Vec<Vec<NumLit>>;

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyDoc {
    Deterministic { actions: Vec<ActionLabel> },
    Stationary { rows: Rows },
    EventuallyStationary { prefix: Vec<Rows>, tail: Rows },
    Periodic { prefix: Vec<Rows>, cycle: Vec<Rows> },
}

fn number(v: &NumLit) -> Result<f64> {
    match v {
        NumLit::Number(x) => Ok(*x),
        NumLit::Text(s) => f64::parse_literal(s).ok_or_else(|| Error::Parse(format!("bad number literal {:?}", s))),
    }
}

fn kernel(rows: &Rows, mdp: &FiniteMdp<f64>) -> Result<Kernel<f64>> {
    if rows.len() != mdp.n_states() {
        return Err(Error::DimensionMismatch { what: "policy rows", expected: mdp.n_states(), found: rows.len() });
    }
    let rows = rows.iter().map(|r| r.iter().map(number).collect()).collect::<Result<Vec<Vec<f64>>>>()?;
    let k = Kernel::new(rows);
    k.validate(mdp)?;
    Ok(k)
}

fn label(a: &ActionLabel) -> String {
    match a {
        ActionLabel::Index(i) => i.to_string(),
        ActionLabel::Name(s) => s.clone(),
    }
}

impl PolicyDoc {
    pub fn parse(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn resolve(&self, mdp: &FiniteMdp<f64>) -> Result<Policy<f64>> {
        let kernels = |list: &[Rows]| list.iter().map(|r| kernel(r, mdp)).collect::<Result<Vec<_>>>();
        Ok(match self {
            PolicyDoc::Deterministic { actions } => {
                if actions.len() != mdp.n_states() {
                    return Err(Error::DimensionMismatch {
                        what: "policy actions",
                        expected: mdp.n_states(),
                        found: actions.len(),
                    });
                }
                let choice = actions
                    .iter()
                    .enumerate()
                    .map(|(x, a)| {
                        let name = label(a);
                        mdp.action_labels(x)
                            .iter()
                            .position(|l| *l == name)
                            .ok_or_else(|| Error::InvalidArgument(format!("state {} has no action {:?}", x, name)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Policy::Stationary(Kernel::deterministic(mdp, &choice))
            }
            PolicyDoc::Stationary { rows } => Policy::Stationary(kernel(rows, mdp)?),
            PolicyDoc::EventuallyStationary { prefix, tail } => {
                Policy::Markov(MarkovPolicy::eventually_stationary(kernels(prefix)?, kernel(tail, mdp)?))
            }
            PolicyDoc::Periodic { prefix, cycle } => {
                if cycle.is_empty() {
                    return Err(Error::InvalidArgument("periodic policy needs a nonempty cycle".into()));
                }
                Policy::Markov(MarkovPolicy::periodic(kernels(prefix)?, kernels(cycle)?))
            }
        })
    }
}
