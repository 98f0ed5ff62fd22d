//! Seeded random instances for test suites and the CLI.

use rand::Rng;

use crate::mdp::FiniteMdp;
use crate::policy::Kernel;
use crate::scalar::{Rational, Scalar};

/// Labels `"0".."m-1"` for each state.
pub fn index_labels(counts: &[usize]) -> Vec<Vec<String>> {
    counts.iter().map(|&m| (0..m).map(|a| a.to_string()).collect()).collect()
}

/// Random probability row of length `n`; each entry is kept with
/// probability `density`, and at least one entry is positive.
pub fn random_row<R: Rng>(rng: &mut R, n: usize, density: f64) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < density { rng.gen::<f64>() + 0.05 } else { 0.0 })
        .collect();
    if row.iter().all(|v| *v == 0.0) {
        row[rng.gen_range(0..n)] = 1.0;
    }
    let s: f64 = row.iter().sum();
    row.iter().map(|v| v / s).collect()
}

/// Random MDP with `n` states, between 1 and `max_actions` actions per
/// state, sparse rows and costs uniform on `[0, 10)`.
pub fn random_mdp<R: Rng>(rng: &mut R, n: usize, max_actions: usize, density: f64) -> FiniteMdp<f64> {
    let counts: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=max_actions)).collect();
    let q = counts
        .iter()
        .map(|&m| (0..m).map(|_| random_row(rng, n, density)).collect())
        .collect();
    let c = counts.iter().map(|&m| (0..m).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
    FiniteMdp::new(index_labels(&counts), q, c).expect("generated rows are stochastic")
}

/// Random randomized stationary kernel for `mdp`.
pub fn random_kernel<R: Rng>(rng: &mut R, mdp: &FiniteMdp<f64>) -> Kernel<f64> {
    Kernel::new((0..mdp.n_states()).map(|x| random_row(rng, mdp.n_actions(x), 1.0)).collect())
}

/// Random deterministic stationary kernel for `mdp`.
pub fn random_choice<R: Rng>(rng: &mut R, mdp: &FiniteMdp<f64>) -> Vec<usize> {
    (0..mdp.n_states()).map(|x| rng.gen_range(0..mdp.n_actions(x))).collect()
}

fn rational_row<R: Rng>(rng: &mut R, n: usize) -> Vec<Rational> {
    let mut w: Vec<i64> = (0..n).map(|_| rng.gen_range(0..4)).collect();
    if w.iter().all(|v| *v == 0) {
        w[rng.gen_range(0..n)] = 1;
    }
    let s: i64 = w.iter().sum();
    w.into_iter().map(|v| Rational::from_ratio(v, s)).collect()
}

/// Random MDP over rationals: rows from integer weights in `0..4`,
/// integer costs in `0..10`.
pub fn random_rational_mdp<R: Rng>(rng: &mut R, n: usize, max_actions: usize) -> FiniteMdp<Rational> {
    let counts: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=max_actions)).collect();
    let q = counts.iter().map(|&m| (0..m).map(|_| rational_row(rng, n)).collect()).collect();
    let c = counts
        .iter()
        .map(|&m| (0..m).map(|_| Rational::from_int(rng.gen_range(0..10))).collect())
        .collect();
    FiniteMdp::new(index_labels(&counts), q, c).expect("generated rows are stochastic")
}

/// Random randomized kernel over rationals.
pub fn random_rational_kernel<R: Rng>(rng: &mut R, mdp: &FiniteMdp<Rational>) -> Kernel<Rational> {
    Kernel::new((0..mdp.n_states()).map(|x| rational_row(rng, mdp.n_actions(x))).collect())
}
