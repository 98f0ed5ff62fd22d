//! Countable-state models with closed forms: the harmonic absorbing chain,
//! the inventory random walk on the real line, and discounted occupation
//! measures of finite models.

use std::sync::Arc;

use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{hitting_time_sweep, TruncationSweep};
use crate::criteria::{avg_cost_stationary, stage_marginals};
use crate::error::{Error, Result};
use crate::mdp::{CountableMdp, FiniteMdp};
use crate::policy::{Kernel, Policy};
use crate::scalar::{Rational, Scalar};

/// Horizon of the hitting-time partial sum in [`absorbing_chain_report`].
pub const PARTIAL_SUM_HORIZON: u64 = 1_000_000;

type RatFn = dyn Fn(usize) -> Rational + Send + Sync;

/// Chain on `{0, 1, 2, ...}`: 0 is absorbing; from `k >= 1` it moves to 0
/// with probability `beta(k)` and to `k + 1` otherwise.
#[derive(Clone)]
pub struct AbsorbingChain {
    beta: Arc<RatFn>,
    cost: Arc<RatFn>,
}

impl std::fmt::Debug for AbsorbingChain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("AbsorbingChain { .. }")
    }
}

impl AbsorbingChain {
    pub fn new(
        beta: impl Fn(usize) -> Rational + Send + Sync + 'static,
        cost: impl Fn(usize) -> Rational + Send + Sync + 'static,
    ) -> Self {
        AbsorbingChain { beta: Arc::new(beta), cost: Arc::new(cost) }
    }

    /// `beta(k) = 1/(k+1)` with the given cost.
    pub fn harmonic(cost: impl Fn(usize) -> Rational + Send + Sync + 'static) -> Self {
        Self::new(|k| Rational::from_ratio(1, k as i64 + 1), cost)
    }

    /// Harmonic chain with `c(k) = k`.
    pub fn harmonic_linear() -> Self {
        Self::harmonic(|k| Rational::from_int(k as i64))
    }

    /// Harmonic chain with `c(0) = 0` and `c(k) = 1` for `k >= 1`.
    pub fn harmonic_bounded() -> Self {
        Self::harmonic(|k| if k == 0 { Rational::zero() } else { Rational::one() })
    }

    /// Checked `beta(k)`; values outside `(0, 1]` are rejected.
    pub fn beta(&self, k: usize) -> Result<Rational> {
        let b = (self.beta)(k);
        if b <= Rational::zero() || b > Rational::one() {
            return Err(Error::InvalidArgument(format!("beta({}) = {} is not in (0, 1]", k, b)));
        }
        Ok(b)
    }

    pub fn cost(&self, k: usize) -> Rational {
        (self.cost)(k)
    }

    /// `P_k(tau_0 > n)`, the product of `1 - beta(j)` over `k <= j < k+n`.
    pub fn survival(&self, k: usize, n: usize) -> Result<Rational> {
        if k == 0 {
            return Ok(if n == 0 { Rational::one() } else { Rational::zero() });
        }
        let mut s = Rational::one();
        for j in k..k + n {
            s *= Rational::one() - self.beta(j)?;
        }
        Ok(s)
    }

    /// Uncontrolled countable model over rationals.
    pub fn model(&self) -> CountableMdp<Rational> {
        let beta = self.beta.clone();
        let cost = self.cost.clone();
        CountableMdp::uncontrolled(
            move |k| {
                if k == 0 {
                    return vec![(0, Rational::one())];
                }
                let b = beta(k);
                let stay = Rational::one() - b.clone();
                if stay.is_zero() {
                    vec![(0, b)]
                } else {
                    vec![(0, b), (k + 1, stay)]
                }
            },
            move |k| cost(k),
        )
    }

    /// Same model in floating point.
    pub fn model_f64(&self) -> CountableMdp<f64> {
        let beta = self.beta.clone();
        let cost = self.cost.clone();
        CountableMdp::uncontrolled(
            move |k| {
                if k == 0 {
                    return vec![(0, 1.0)];
                }
                let b = beta(k).to_f64();
                vec![(0, b), (k + 1, 1.0 - b)]
            },
            move |k| cost(k).to_f64(),
        )
    }
}

/// `P_k(tau_0 > n) = k/(k+n)` for the harmonic chain.
///
/// # Panics
/// If `k == 0`.
pub fn survival_closed_form(k: usize, n: usize) -> Rational {
    assert!(k >= 1, "survival_closed_form needs k >= 1");
    Rational::from_ratio(k as i64, (k + n) as i64)
}

/// `sum_{n<horizon} k/(k+n)`, the truncated expected hitting time of 0.
pub fn hitting_partial_sum(k: u64, horizon: u64) -> f64 {
    let kf = k as f64;
    (0..horizon).map(|n| kf / (kf + n as f64)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorbingChainRow {
    pub k: usize,
    /// Closed-form optimal gain `g(k) = k` under `c(k) = k`.
    pub closed_form_gain: f64,
    /// `E_k[c(x_n)] = k` held exactly for every `n <= horizon`.
    pub expected_cost_constant: bool,
    /// Gain of the bounded-cost truncation, one value per criterion.
    pub bounded_gain: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorbingChainReport {
    pub schema: u32,
    pub k_trunc: usize,
    pub horizon: usize,
    pub rows: Vec<AbsorbingChainRow>,
    pub expected_cost_exact: bool,
    pub survival_exact: bool,
    pub bounded_gain_max_abs: f64,
    pub bounded_gain_within_inverse_k: bool,
    pub hitting_start: u64,
    pub hitting_horizon: u64,
    pub hitting_partial_sum: f64,
    pub hitting_log_bound: f64,
    pub hitting_sweep: TruncationSweep,
}

impl AbsorbingChainReport {
    pub fn to_csv(&self) -> String {
        crate::report::csv_table(
            &["k", "g_closed_form", "expected_cost_constant", "g1_bounded", "g2_bounded", "g3_bounded", "g4_bounded"],
            self.rows.iter().map(|r| {
                let mut v = vec![r.k.to_string(), r.closed_form_gain.to_string(), r.expected_cost_constant.to_string()];
                v.extend(r.bounded_gain.iter().map(|g| g.to_string()));
                v
            }),
        )
    }
}

/// Assembles the absorbing-chain checks on states `0..=k_trunc`.
///
/// `E_k[c(x_n)]` is propagated exactly for the chain's own cost on a
/// truncation deep enough that the boundary is never reached, and compared
/// against `k`. The bounded-cost gain is the stationary gain of the
/// truncation at `k_trunc`, evaluated by every criterion.
pub fn absorbing_chain_report(chain: &AbsorbingChain, k_trunc: usize, horizon: usize) -> Result<AbsorbingChainReport> {
    if k_trunc < 2 {
        return Err(Error::InvalidArgument("truncation level must be at least 2".into()));
    }
    let deep = chain.model().truncate(k_trunc + horizon + 1)?;
    // v_n(x) = E_x[c(x_n)] by backward iteration, all starts at once.
    let mut v: Vec<Rational> = (0..deep.n_states()).map(|x| deep.cost(x, 0).clone()).collect();
    let mut constant = vec![true; k_trunc + 1];
    for n in 0..=horizon {
        for (k, ok) in constant.iter_mut().enumerate() {
            *ok &= v[k] == Rational::from_int(k as i64);
        }
        if n < horizon {
            v = (0..deep.n_states()).map(|x| deep.expect(x, 0, &v)).collect();
        }
    }
    let mut survival_exact = true;
    for k in 1..=k_trunc {
        for n in [0, 1, horizon / 2, horizon] {
            survival_exact &= chain.survival(k, n)? == survival_closed_form(k, n);
        }
    }

    let bounded = AbsorbingChain { beta: chain.beta.clone(), cost: AbsorbingChain::harmonic_bounded().cost }
        .model_f64()
        .truncate(k_trunc)?;
    let mu = Kernel::deterministic(&bounded, &vec![0; bounded.n_states()]);
    let report = avg_cost_stationary(&bounded, &mu)?;
    let rows: Vec<AbsorbingChainRow> = (0..=k_trunc)
        .map(|k| AbsorbingChainRow {
            k,
            closed_form_gain: k as f64,
            expected_cost_constant: constant[k],
            bounded_gain: report.rows[k].j,
        })
        .collect();
    let bounded_gain_max_abs = rows.iter().flat_map(|r| r.bounded_gain).fold(0.0f64, |m, g| m.max(g.abs()));

    let hitting_start = 5u64.min(k_trunc as u64);
    let mut levels: Vec<usize> = std::iter::successors(Some(10usize), |l| Some(l * 2)).take_while(|&l| l < k_trunc).collect();
    levels.retain(|&l| l as u64 >= hitting_start);
    levels.push(k_trunc);
    let hitting_sweep = hitting_time_sweep(&chain.model_f64(), hitting_start as usize, &[0], &levels)?;
    let hs = hitting_start as f64;
    Ok(AbsorbingChainReport {
        schema: 1,
        k_trunc,
        horizon,
        expected_cost_exact: constant.iter().all(|b| *b),
        survival_exact,
        bounded_gain_within_inverse_k: bounded_gain_max_abs <= 1.0 / k_trunc as f64,
        bounded_gain_max_abs,
        rows,
        hitting_start,
        hitting_horizon: PARTIAL_SUM_HORIZON,
        hitting_partial_sum: hitting_partial_sum(hitting_start, PARTIAL_SUM_HORIZON),
        hitting_log_bound: hs * (PARTIAL_SUM_HORIZON as f64 / hs).ln(),
        hitting_sweep,
    })
}

/// Demand distribution of the inventory walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Demand {
    /// `high` with probability `p_high`, else `low`. Purely atomic.
    TwoPoint { low: f64, high: f64, p_high: f64 },
    /// Mixture of uniform laws `(weight, lo, hi)`; weights sum to 1.
    UniformMixture(Vec<(f64, f64, f64)>),
}

impl Demand {
    /// Fair coin on `{0, 2}`.
    pub fn two_point() -> Self {
        Demand::TwoPoint { low: 0.0, high: 2.0, p_high: 0.5 }
    }

    /// Equal mixture of `U[0,1]` and `U[1,2]`.
    pub fn uniform_mixture() -> Self {
        Demand::UniformMixture(vec![(0.5, 0.0, 1.0), (0.5, 1.0, 2.0)])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("demand: {}", m)));
        match self {
            Demand::TwoPoint { low, high, p_high } => {
                if *low < 0.0 || *high < 0.0 || !(0.0..=1.0).contains(p_high) {
                    return bad("support must be nonnegative and p_high in [0, 1]");
                }
            }
            Demand::UniformMixture(parts) => {
                if parts.is_empty() || parts.iter().any(|(w, lo, hi)| *w < 0.0 || *lo < 0.0 || hi <= lo) {
                    return bad("components need nonnegative weights and 0 <= lo < hi");
                }
                if (parts.iter().map(|p| p.0).sum::<f64>() - 1.0).abs() > 1e-12 {
                    return bad("mixture weights must sum to 1");
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            Demand::TwoPoint { low, high, p_high } => low * (1.0 - p_high) + high * p_high,
            Demand::UniformMixture(parts) => parts.iter().map(|(w, lo, hi)| w * (lo + hi) / 2.0).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let second = match self {
            Demand::TwoPoint { low, high, p_high } => low * low * (1.0 - p_high) + high * high * p_high,
            Demand::UniformMixture(parts) => {
                parts.iter().map(|(w, lo, hi)| w * (lo * lo + lo * hi + hi * hi) / 3.0).sum()
            }
        };
        second - m * m
    }

    /// Has an absolutely continuous part.
    pub fn is_spread_out(&self) -> bool {
        matches!(self, Demand::UniformMixture(_))
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Demand::TwoPoint { low, high, p_high } => {
                if rng.gen::<f64>() < *p_high {
                    *high
                } else {
                    *low
                }
            }
            Demand::UniformMixture(parts) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (w, lo, hi) in parts {
                    acc += w;
                    if u < acc {
                        return rng.gen_range(*lo..*hi);
                    }
                }
                let (_, lo, hi) = parts[parts.len() - 1];
                rng.gen_range(lo..hi)
            }
        }
    }
}

/// `x_{n+1} = x_n + a_n - xi_n` with actions uniform on
/// `[center - half_width, center + half_width]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryWalk {
    pub demand: Demand,
    pub center: f64,
    pub half_width: f64,
}

impl InventoryWalk {
    /// Action mean equal to the demand mean, so increments have mean zero.
    pub fn zero_drift(demand: Demand, half_width: f64) -> Self {
        let center = demand.mean();
        InventoryWalk { demand, center, half_width }
    }

    /// Shifts the action mean by `offset`.
    pub fn with_offset(mut self, offset: f64) -> Self {
        self.center += offset;
        self
    }

    pub fn drift(&self) -> f64 {
        self.center - self.demand.mean()
    }

    pub fn increment_std(&self) -> f64 {
        (self.demand.variance() + self.half_width * self.half_width / 3.0).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        self.demand.validate()?;
        if !(self.half_width >= 0.0) || self.center - self.half_width < 0.0 {
            return Err(Error::InvalidArgument("actions must lie in [0, inf) with half_width >= 0".into()));
        }
        Ok(())
    }

    pub fn sample_action<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.half_width == 0.0 {
            self.center
        } else {
            rng.gen_range(self.center - self.half_width..=self.center + self.half_width)
        }
    }

    pub fn step<R: Rng>(&self, x: f64, rng: &mut R) -> f64 {
        let a = self.sample_action(rng);
        x + a - self.demand.sample(rng)
    }
}

/// Outcome of [`walk_recurrence_probe`]: an estimate, never a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkProbe {
    pub interval: (f64, f64),
    pub start: f64,
    pub n_traj: usize,
    pub horizon: u64,
    pub seed: u64,
    pub hits: usize,
    pub estimate: f64,
    pub stderr: f64,
    /// First entrance time per trajectory, `None` if not within the horizon.
    pub hit_times: Vec<Option<u64>>,
}

impl WalkProbe {
    pub fn to_csv(&self) -> String {
        crate::report::csv_table(
            &["trajectory", "hit", "hit_time"],
            self.hit_times.iter().enumerate().map(|(i, t)| {
                vec![i.to_string(), t.is_some().to_string(), t.map(|v| v.to_string()).unwrap_or_default()]
            }),
        )
    }
}

/// Estimates `P_start(tau_[lo,hi] <= horizon)` over `n_traj` trajectories;
/// trajectory `i` uses its own stream seeded by `seed ^ i`.
pub fn walk_recurrence_probe(
    walk: &InventoryWalk,
    interval: (f64, f64),
    start: f64,
    n_traj: usize,
    horizon: u64,
    seed: u64,
) -> Result<WalkProbe> {
    walk.validate()?;
    let (lo, hi) = interval;
    if !(lo < hi) {
        return Err(Error::InvalidArgument("interval needs lo < hi".into()));
    }
    if n_traj == 0 {
        return Err(Error::InvalidArgument("need at least one trajectory".into()));
    }
    let hit_times: Vec<Option<u64>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i);
            let mut x = start;
            for n in 0..=horizon {
                if (lo..=hi).contains(&x) {
                    return Some(n);
                }
                if n < horizon {
                    x = walk.step(x, &mut rng);
                }
            }
            None
        })
        .collect();
    let hits = hit_times.iter().filter(|t| t.is_some()).count();
    let p = hits as f64 / n_traj as f64;
    Ok(WalkProbe {
        interval,
        start,
        n_traj,
        horizon,
        seed,
        hits,
        estimate: p,
        stderr: (p * (1.0 - p) / n_traj as f64).sqrt(),
        hit_times,
    })
}

/// Truncated discounted occupation measure
/// `sum_{n<horizon} 2^{-n-1} P(x_n = .)`, with the untracked tail mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationMeasure<T = f64> {
    pub horizon: usize,
    pub weights: Vec<T>,
    /// `2^{-horizon}`, the mass of the dropped stages.
    pub residual: T,
}

impl<T: Scalar> OccupationMeasure<T> {
    pub fn total_mass(&self) -> T {
        self.weights.iter().fold(T::zero(), |s, w| s + w.clone())
    }

    /// Smallest of `min(self(x), other(x))` over `support`.
    pub fn min_common_mass(&self, other: &Self, support: &[usize]) -> Option<T> {
        support
            .iter()
            .map(|&x| {
                let (a, b) = (&self.weights[x], &other.weights[x]);
                if a < b {
                    a.clone()
                } else {
                    b.clone()
                }
            })
            .reduce(|m, v| if v < m { v } else { m })
    }

    /// `self(x) >= factor * p(x)` for every state.
    pub fn dominates(&self, p: &[T], factor: &T) -> bool {
        self.weights.iter().zip(p).all(|(w, q)| *w >= factor.clone() * q.clone())
    }
}

/// Discounted occupation measure of `policy` from `p0`, by exact
/// propagation of the stage marginals.
pub fn occupation_measure<T: Scalar>(
    mdp: &FiniteMdp<T>,
    policy: &Policy<T>,
    p0: &[T],
    horizon: usize,
) -> Result<OccupationMeasure<T>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("occupation measure needs horizon >= 1".into()));
    }
    let marginals = stage_marginals(mdp, policy, p0, horizon)?;
    let half = T::from_ratio(1, 2);
    let mut weight = half.clone();
    let mut weights = vec![T::zero(); mdp.n_states()];
    for n in 0..horizon {
        for (w, d) in weights.iter_mut().zip(marginals.state_marginal(n)) {
            *w = w.clone() + weight.clone() * d;
        }
        weight = weight * half.clone();
    }
    Ok(OccupationMeasure { horizon, weights, residual: weight * T::from_int(2) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{random_kernel, random_mdp};
    use crate::policy::MarkovPolicy;
    use proptest::prelude::*;
    use rand::Rng;

    fn r(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    #[test]
    fn survival_small_cases() {
        assert_eq!(survival_closed_form(1, 0), r(1, 1));
        assert_eq!(survival_closed_form(3, 7), r(3, 10));
        let chain = AbsorbingChain::harmonic_linear();
        assert_eq!(chain.survival(3, 7).unwrap(), r(3, 10));
        assert_eq!(chain.survival(0, 0).unwrap(), r(1, 1));
        assert_eq!(chain.survival(0, 4).unwrap(), r(0, 1));
    }

    #[test]
    fn survival_times_level_is_start_on_full_grid() {
        for k in 1..=1000usize {
            for n in (0..=1000usize).step_by(37).chain([1000]) {
                let s = survival_closed_form(k, n);
                assert_eq!(s * Rational::from_int((k + n) as i64), Rational::from_int(k as i64));
            }
        }
    }

    #[test]
    fn bad_beta_is_rejected() {
        let chain = AbsorbingChain::new(|_| Rational::from_int(0), |_| Rational::from_int(0));
        assert!(chain.beta(3).is_err());
        assert!(chain.survival(2, 3).is_err());
    }

    #[test]
    fn report_matches_closed_forms() {
        let rep = absorbing_chain_report(&AbsorbingChain::harmonic_linear(), 20, 30).unwrap();
        assert!(rep.expected_cost_exact);
        assert!(rep.survival_exact);
        assert!(rep.bounded_gain_within_inverse_k);
        assert_eq!(rep.rows.len(), 21);
        assert_eq!(rep.rows[5].closed_form_gain, 5.0);
        assert!(rep.hitting_partial_sum > rep.hitting_log_bound);
        assert!(rep.hitting_sweep.monotone_growth);
        assert!(absorbing_chain_report(&AbsorbingChain::harmonic_linear(), 1, 3).is_err());
    }

    #[test]
    fn report_flags_non_constant_expectation() {
        // Constant cost 1 on k >= 1: E_k[c(x_n)] = k/(k+n) != k.
        let rep = absorbing_chain_report(&AbsorbingChain::harmonic_bounded(), 5, 4).unwrap();
        assert!(!rep.expected_cost_exact);
        assert!(rep.rows[0].expected_cost_constant);
        assert!(!rep.rows[1].expected_cost_constant);
    }

    #[test]
    fn expected_cost_agrees_with_forward_propagation() {
        let model = AbsorbingChain::harmonic_linear().model().truncate(40).unwrap();
        let policy = Policy::Stationary(Kernel::deterministic(&model, &vec![0; model.n_states()]));
        for k in [1usize, 5, 9] {
            let mut p0 = vec![Rational::zero(); model.n_states()];
            p0[k] = Rational::one();
            let costs = crate::criteria::stage_costs(&model, &policy, &p0, 25).unwrap();
            assert!(costs.iter().all(|c| *c == Rational::from_int(k as i64)));
        }
    }

    #[test]
    fn partial_sum_matches_harmonic_difference() {
        // sum_{n<N} k/(k+n) = k (H_{k+N-1} - H_{k-1}).
        let h = |m: u64| (1..=m).map(|i| 1.0 / i as f64).sum::<f64>();
        let got = hitting_partial_sum(5, 1000);
        assert!((got - 5.0 * (h(1004) - h(4))).abs() < 1e-9);
    }

    #[test]
    fn demand_moments() {
        let d = Demand::two_point();
        assert_eq!(d.mean(), 1.0);
        assert_eq!(d.variance(), 1.0);
        assert!(!d.is_spread_out());
        let m = Demand::uniform_mixture();
        assert!((m.mean() - 1.0).abs() < 1e-15);
        assert!((m.variance() - 1.0 / 3.0).abs() < 1e-12);
        assert!(m.is_spread_out());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200_000;
        let mean = (0..n).map(|_| m.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01);
        assert!(Demand::UniformMixture(vec![(0.5, 0.0, 1.0)]).validate().is_err());
        assert!(Demand::TwoPoint { low: -1.0, high: 1.0, p_high: 0.5 }.validate().is_err());
    }

    #[test]
    fn actions_stay_in_declared_interval() {
        let walk = InventoryWalk::zero_drift(Demand::two_point(), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let a = walk.sample_action(&mut rng);
            assert!((0.5..=1.5).contains(&a));
        }
        assert_eq!(walk.drift(), 0.0);
        assert_eq!(walk.clone().with_offset(1.0).drift(), 1.0);
    }

    #[test]
    fn probe_start_inside_hits_at_time_zero() {
        let walk = InventoryWalk::zero_drift(Demand::two_point(), 0.5);
        let p = walk_recurrence_probe(&walk, (-1.0, 1.0), 0.3, 10, 100, 0).unwrap();
        assert_eq!(p.estimate, 1.0);
        assert!(p.hit_times.iter().all(|t| *t == Some(0)));
        assert!(walk_recurrence_probe(&walk, (1.0, -1.0), 0.0, 10, 100, 0).is_err());
    }

    #[test]
    fn probe_is_reproducible_by_seed() {
        let walk = InventoryWalk::zero_drift(Demand::uniform_mixture(), 0.5);
        let a = walk_recurrence_probe(&walk, (-1.0, 1.0), 8.0, 20, 2000, 11).unwrap();
        let b = walk_recurrence_probe(&walk, (-1.0, 1.0), 8.0, 20, 2000, 11).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn absorbing_start_collects_all_tracked_mass() {
        let mdp = AbsorbingChain::harmonic_linear().model().truncate(6).unwrap();
        let policy = Policy::Stationary(Kernel::deterministic(&mdp, &vec![0; 7]));
        let mut p0 = vec![Rational::zero(); 7];
        p0[0] = Rational::one();
        let occ = occupation_measure(&mdp, &policy, &p0, 10).unwrap();
        assert_eq!(occ.weights[0], Rational::one() - r(1, 1024));
        assert_eq!(occ.residual, r(1, 1024));
        assert!(occupation_measure(&mdp, &policy, &p0, 0).is_err());
    }

    /// Every state gets an extra last action whose successor law is `reset`.
    fn reset_model(mut q: Vec<Vec<Vec<Rational>>>, reset: &[Rational]) -> FiniteMdp<Rational> {
        for row in q.iter_mut() {
            row.push(reset.to_vec());
        }
        let counts: Vec<usize> = q.iter().map(|r| r.len()).collect();
        let c = counts.iter().map(|&m| vec![Rational::zero(); m]).collect();
        FiniteMdp::new(crate::gen::index_labels(&counts), q, c).unwrap()
    }

    fn arb_row(n: usize) -> impl Strategy<Value = Vec<Rational>> {
        prop::collection::vec(0i64..4, n).prop_filter("nonzero", |v| v.iter().any(|x| *x > 0)).prop_map(|v| {
            let s: i64 = v.iter().sum();
            v.into_iter().map(|x| Rational::from_ratio(x, s)).collect()
        })
    }

    fn arb_kernel(counts: Vec<usize>) -> impl Strategy<Value = Kernel<Rational>> {
        counts.into_iter().map(arb_row).collect::<Vec<_>>().prop_map(Kernel::new)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn occupation_total_is_exactly_one(
            q in prop::collection::vec(prop::collection::vec(arb_row(3), 2), 3),
            p0 in arb_row(3),
            horizon in 1usize..12,
        ) {
            let counts = vec![2; 3];
            let mdp = FiniteMdp::new(crate::gen::index_labels(&counts), q, vec![vec![Rational::zero(); 2]; 3]).unwrap();
            let policy = Policy::Stationary(Kernel::uniform(&mdp));
            let occ = occupation_measure(&mdp, &policy, &p0, horizon).unwrap();
            prop_assert_eq!(occ.total_mass() + occ.residual.clone(), Rational::one());
        }

        #[test]
        fn special_state_gets_half(
            q in prop::collection::vec(prop::collection::vec(arb_row(3), 2), 3),
            horizon in 1usize..10,
            seed in 0u64..1000,
        ) {
            let counts = vec![2; 3];
            let mdp = FiniteMdp::new(crate::gen::index_labels(&counts), q, vec![vec![Rational::zero(); 2]; 3]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k: Kernel<Rational> = Kernel::new(
                (0..3).map(|_| { let a = rng.gen_range(0..=4i64); vec![r(a, 4), r(4 - a, 4)] }).collect(),
            );
            let policy = Policy::Markov(MarkovPolicy::eventually_stationary(vec![Kernel::uniform(&mdp)], k));
            let occ = occupation_measure(&mdp, &policy, &[Rational::one(), Rational::zero(), Rational::zero()], horizon).unwrap();
            prop_assert!(occ.weights[0] >= r(1, 2));
        }

        #[test]
        fn reset_measures_dominate_half_reset_law_and_overlap(
            q in prop::collection::vec(prop::collection::vec(arb_row(3), 1), 3),
            reset in arb_row(3),
            k1 in arb_kernel(vec![2; 3]),
            k2 in arb_kernel(vec![2; 3]),
            horizon in 1usize..10,
        ) {
            let mdp = reset_model(q, &reset);
            let a = occupation_measure(&mdp, &Policy::Stationary(k1), &reset, horizon).unwrap();
            let b = occupation_measure(&mdp, &Policy::Stationary(k2), &reset, horizon).unwrap();
            prop_assert!(a.dominates(&reset, &r(1, 2)));
            prop_assert!(b.dominates(&reset, &r(1, 2)));
            let charged: Vec<usize> = (0..3).filter(|&x| reset[x] > Rational::zero()).collect();
            let min_reset = charged.iter().map(|&x| reset[x].clone()).min().unwrap();
            prop_assert!(a.min_common_mass(&b, &charged).unwrap() >= min_reset / Rational::from_int(2));
        }
    }

    #[test]
    fn float_occupation_matches_rational() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mdp = random_mdp(&mut rng, 4, 2, 0.6);
        let k = random_kernel(&mut rng, &mdp);
        let occ = occupation_measure(&mdp, &Policy::Stationary(k), &[0.25; 4], 30).unwrap();
        assert!((occ.total_mass() + occ.residual - 1.0).abs() < 1e-12);
    }
}
