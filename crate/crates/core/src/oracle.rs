//! Brute-force validators, independent of the batched training code:
//! exact enumeration of binomial trees, the deterministic zero-volatility
//! program, and a sampling check of the relaxed stopping weights.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::ParamStore;
use crate::contracts::{ContractKind, ContractSpec, ContractTerms};
use crate::error::{Error, Result};
use crate::market::{derive_seed, path_rng, step_state, MarketParams, MarketState, PathBatch};
use crate::policy::{rollout_path, NetPolicy, Policy};
use crate::training::rollout::{meanvar, rollout};

/// Deepest tree the enumerators accept (`2^12` leaves).
pub const MAX_TREE_DEPTH: usize = 12;

/// Exact relaxed statistics of a policy on the binomial tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TreeObjective {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    pub objective: f64,
    /// Equiprobable leaves summed over.
    pub leaves: usize,
}

fn tree_step(mp: &MarketParams) -> f64 {
    mp.sigma * mp.dt.sqrt()
}

fn check_depth(mp: &MarketParams) -> Result<()> {
    if mp.days > MAX_TREE_DEPTH {
        return Err(Error::Contract(format!(
            "tree depth {} exceeds the enumeration limit {MAX_TREE_DEPTH}",
            mp.days
        )));
    }
    Ok(())
}

/// Relaxed sums `(Σ_leaves Σ_n P(leaf) w_n PnL_n, … PnL_n²)` of the subtree
/// below `st`, where `survive` is the probability of not having settled
/// before `st.n` and `mass` the probability of the prefix.
fn descend(
    policy: &dyn Policy,
    spec: &ContractSpec,
    mp: &MarketParams,
    st: MarketState,
    survive: f64,
    mass: f64,
) -> Result<(f64, f64)> {
    let n = st.n;
    let p = policy.stop_probability(&st, spec, mp)?;
    let mut acc = (0.0, 0.0);
    if p > 0.0 {
        let pnl = spec.pnl(&st, mp.s0)?;
        let w = mass * survive * p;
        acc = (w * pnl, w * pnl * pnl);
    }
    if n == mp.days || p >= 1.0 {
        return Ok(acc);
    }
    let v = policy.trade_rate(&st, spec, mp)?;
    let h = tree_step(mp);
    let survive = survive * (1.0 - p);
    let children: Vec<f64> = if h == 0.0 { vec![st.s] } else { vec![st.s + h, st.s - h] };
    let share = mass / children.len() as f64;
    let parts: Result<Vec<(f64, f64)>> = if n < 4 && children.len() > 1 {
        children
            .par_iter()
            .map(|&s_next| descend(policy, spec, mp, step_state(&st, v, s_next, mp)?, survive, share))
            .collect()
    } else {
        children
            .iter()
            .map(|&s_next| descend(policy, spec, mp, step_state(&st, v, s_next, mp)?, survive, share))
            .collect()
    };
    for (a, b) in parts? {
        acc.0 += a;
        acc.1 += b;
    }
    Ok(acc)
}

/// Exact relaxed objective over all `2^N` equiprobable paths with
/// increments `±σ√δt` (a single path when `σ = 0`).
pub fn enumerate_tree_objective(
    policy: &dyn Policy,
    spec: &ContractSpec,
    mp: &MarketParams,
    gamma: f64,
) -> Result<TreeObjective> {
    check_depth(mp)?;
    let (m1, m2) = descend(policy, spec, mp, MarketState::initial(mp.s0), 1.0, 1.0)?;
    Ok(TreeObjective {
        mean: m1,
        second_moment: m2,
        variance: m2 - m1 * m1,
        objective: meanvar(m1, m2, gamma),
        leaves: if tree_step(mp) == 0.0 { 1 } else { 1 << mp.days },
    })
}

/// Expected PnL of a hard (0/1) stopping policy by backward induction:
/// the value of a node is its PnL if the policy stops there, otherwise the
/// average of its children's values.
pub fn backward_induction_value(policy: &dyn Policy, spec: &ContractSpec, mp: &MarketParams) -> Result<f64> {
    check_depth(mp)?;
    fn value(policy: &dyn Policy, spec: &ContractSpec, mp: &MarketParams, st: MarketState) -> Result<f64> {
        let p = policy.stop_probability(&st, spec, mp)?;
        if p != 0.0 && p != 1.0 {
            return Err(Error::Contract(format!(
                "backward induction needs a hard stopping rule, got p = {p} on day {}",
                st.n
            )));
        }
        if p == 1.0 {
            return spec.pnl(&st, mp.s0);
        }
        let v = policy.trade_rate(&st, spec, mp)?;
        let h = mp.sigma * mp.dt.sqrt();
        let up = value(policy, spec, mp, step_state(&st, v, st.s + h, mp)?)?;
        let down = value(policy, spec, mp, step_state(&st, v, st.s - h, mp)?)?;
        Ok(0.5 * (up + down))
    }
    value(policy, spec, mp, MarketState::initial(mp.s0))
}

/// `count` binomial trajectories (`±σ√δt` with probability ½ each).
pub fn simulate_binomial_paths(mp: &MarketParams, count: usize, seed: u64) -> Result<PathBatch> {
    let h = tree_step(mp);
    let paths: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let mut s = mp.s0;
            let mut out = Vec::with_capacity(mp.days + 1);
            out.push(s);
            for _ in 0..mp.days {
                s += if rng.random::<bool>() { h } else { -h };
                out.push(s);
            }
            out
        })
        .collect();
    PathBatch::from_paths(&paths, seed)
}

/// Monte-Carlo objective with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloObjective {
    pub objective: f64,
    pub std_error: f64,
    pub paths: usize,
}

/// Pools per-path relaxed sums `a_i = Σ w PnL`, `b_i = Σ w PnL²` into `J`
/// and its standard error, using `∂J/∂m1 = 1 + γ m1`, `∂J/∂m2 = −γ/2`.
pub fn monte_carlo_objective(a: &[f64], b: &[f64], gamma: f64) -> MonteCarloObjective {
    let m = a.len() as f64;
    let m1 = a.iter().sum::<f64>() / m;
    let m2 = b.iter().sum::<f64>() / m;
    let z: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| (1.0 + gamma * m1) * x - 0.5 * gamma * y)
        .collect();
    let zm = z.iter().sum::<f64>() / m;
    let var = z.iter().map(|v| (v - zm).powi(2)).sum::<f64>() / (m - 1.0);
    MonteCarloObjective {
        objective: meanvar(m1, m2, gamma),
        std_error: (var / m).sqrt(),
        paths: a.len(),
    }
}

/// Optimal deterministic schedule of the fixed-shares problem at zero
/// volatility.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroVolSchedule {
    /// Daily purchases `v_0..v_{N−1}`.
    pub rates: Vec<f64>,
    /// `Σ L(v/V) V δt + C (Q − Σ v δt)²`, the negated optimal objective.
    pub cost: f64,
    /// `Q − Σ v δt`.
    pub residual: f64,
    /// Euclidean norm of the gradient at the solution (€ per share).
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Execution cost plus terminal penalty of a deterministic schedule.
pub fn schedule_cost(rates: &[f64], shares: f64, c: f64, mp: &MarketParams) -> f64 {
    let exec: f64 = rates
        .iter()
        .enumerate()
        .map(|(n, &v)| mp.trading_cost(n, v))
        .sum();
    let bought: f64 = rates.iter().sum::<f64>() * mp.dt;
    exec + c * (shares - bought).powi(2)
}

fn schedule_gradient(rates: &[f64], shares: f64, c: f64, mp: &MarketParams) -> Vec<f64> {
    let k = 1.0 + mp.cost_exponent;
    let residual = shares - rates.iter().sum::<f64>() * mp.dt;
    rates
        .iter()
        .enumerate()
        .map(|(n, &v)| {
            let rho = v / mp.volume[n];
            mp.eta * k * rho.abs().powf(mp.cost_exponent) * rho.signum() * mp.dt - 2.0 * c * residual * mp.dt
        })
        .collect()
}

/// Damped Newton on the convex program. The Hessian is diagonal plus the
/// rank-one penalty term, inverted by Sherman–Morrison. Rates stay
/// positive, where the cost is twice differentiable.
pub fn zero_vol_schedule(spec: &ContractSpec, mp: &MarketParams) -> Result<ZeroVolSchedule> {
    let ContractTerms::FixedShares { shares } = spec.terms else {
        return Err(Error::Contract("the zero-volatility program is defined for fixed shares".into()));
    };
    if mp.sigma != 0.0 {
        return Err(Error::Contract("the zero-volatility program needs sigma = 0".into()));
    }
    let c = spec.penalty_c;
    let days = mp.days;
    let phi = mp.cost_exponent;
    let k = 1.0 + phi;
    let mut v = vec![shares / (days as f64 * mp.dt); days];
    let mut f = schedule_cost(&v, shares, c, mp);
    // Below this norm the gradient is rounding noise of its largest term.
    let slope_scale = 2.0 * c * shares * mp.dt + mp.eta * k * (shares / mp.volume[0]).powf(phi) * mp.dt;
    let tol = 1e-10f64.max(64.0 * f64::EPSILON * slope_scale * (days as f64).sqrt());
    let mut iterations = 0;
    loop {
        let g = schedule_gradient(&v, shares, c, mp);
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gnorm <= tol {
            let residual = shares - v.iter().sum::<f64>() * mp.dt;
            return Ok(ZeroVolSchedule {
                cost: f,
                rates: v,
                residual,
                gradient_norm: gnorm,
                iterations,
            });
        }
        if iterations >= 200 {
            return Err(Error::Numerical(format!(
                "zero-volatility Newton stalled at gradient norm {gnorm:e}"
            )));
        }
        iterations += 1;
        // H = D + u uᵀ with u = √(2C) δt 1.
        let d: Vec<f64> = v
            .iter()
            .enumerate()
            .map(|(n, &x)| {
                let vol = mp.volume[n];
                mp.eta * k * phi * (x / vol).abs().powf(phi - 1.0) * mp.dt / vol
            })
            .collect();
        let u2 = 2.0 * c * mp.dt * mp.dt;
        let dinv_g: Vec<f64> = g.iter().zip(&d).map(|(gi, di)| gi / di).collect();
        let s_g: f64 = dinv_g.iter().sum();
        let s_1: f64 = d.iter().map(|di| 1.0 / di).sum();
        let corr = u2 * s_g / (1.0 + u2 * s_1);
        let step: Vec<f64> = dinv_g.iter().zip(&d).map(|(x, di)| x - corr / di).collect();
        let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();

        // Armijo backtracking inside the positive orthant. Once the cost no
        // longer resolves the decrease, the pure Newton step is taken.
        let mut t = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = v.iter().zip(&step).map(|(x, s)| x - t * s).collect();
            if trial.iter().all(|&x| x > 0.0) {
                let ft = schedule_cost(&trial, shares, c, mp);
                if ft <= f - 1e-4 * t * slope {
                    break Some((trial, ft));
                }
            }
            t *= 0.5;
            if t < 1e-8 {
                break None;
            }
        };
        match accepted {
            Some((trial, ft)) => {
                v = trial;
                f = ft;
            }
            None => {
                let mut t = 1.0;
                let mut trial: Vec<f64> = v.iter().zip(&step).map(|(x, s)| x - s).collect();
                while trial.iter().any(|&x| x <= 0.0) {
                    t *= 0.5;
                    trial = v.iter().zip(&step).map(|(x, s)| x - t * s).collect();
                }
                v = trial;
                f = schedule_cost(&v, shares, c, mp);
            }
        }
    }
}

/// Equal-rate optimum for constant volume by bisection on the first-order
/// condition `η(1+φ)(u/V)^φ = 2C(Q − N u δt)`; an independent check of
/// [`zero_vol_schedule`].
pub fn zero_vol_equal_rate(shares: f64, c: f64, mp: &MarketParams) -> Result<f64> {
    let vol = mp.volume[0];
    if mp.volume.iter().any(|&x| x != vol) {
        return Err(Error::Contract("equal-rate check needs constant volume".into()));
    }
    let n = mp.days as f64;
    let foc = |u: f64| mp.eta * (1.0 + mp.cost_exponent) * (u / vol).powf(mp.cost_exponent) - 2.0 * c * (shares - n * u * mp.dt);
    let (mut lo, mut hi) = (0.0, shares / (n * mp.dt));
    if foc(hi) <= 0.0 {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if foc(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Empirical vs analytic stopping frequencies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernoulliCheck {
    /// `∏_{k<n}(1 − p_k) p_n`.
    pub analytic: Vec<f64>,
    pub empirical: Vec<f64>,
    pub max_abs_deviation: f64,
    /// Largest `|deviation| / √(w(1−w)/M)` over days with `0 < w < 1`.
    pub max_standard_errors: f64,
    pub draws: usize,
}

/// Draws `draws` sequences of uniforms, stops each at the first `n` with
/// `ε̃_n ≤ p_n`, and compares the stopping frequencies with the product
/// weights. Requires `p_N = 1`.
pub fn bernoulli_identity_check(p: &[f64], draws: usize, seed: u64) -> Result<BernoulliCheck> {
    if p.is_empty() || *p.last().unwrap() != 1.0 {
        return Err(Error::Contract("the last stopping probability must be 1".into()));
    }
    if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Contract("stopping probabilities must lie in [0, 1]".into()));
    }
    if draws == 0 {
        return Err(Error::Contract("draws must be at least 1".into()));
    }
    let len = p.len();
    let mut analytic = Vec::with_capacity(len);
    let mut survive = 1.0;
    for &pk in p {
        analytic.push(survive * pk);
        survive *= 1.0 - pk;
    }
    const CHUNK: usize = 1 << 14;
    let chunks = draws.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = path_rng(seed, c as u64);
            let mut counts = vec![0u64; len];
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(draws);
            for _ in lo..hi {
                let n = (0..len).find(|&n| rng.random::<f64>() <= p[n]).unwrap_or(len - 1);
                counts[n] += 1;
            }
            counts
        })
        .reduce(
            || vec![0u64; len],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let m = draws as f64;
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / m).collect();
    let mut max_abs = 0.0f64;
    let mut max_se = 0.0f64;
    for (e, a) in empirical.iter().zip(&analytic) {
        let dev = (e - a).abs();
        max_abs = max_abs.max(dev);
        if *a > 0.0 && *a < 1.0 {
            max_se = max_se.max(dev / (a * (1.0 - a) / m).sqrt());
        } else if dev > 0.0 {
            max_se = f64::INFINITY;
        }
    }
    Ok(BernoulliCheck {
        analytic,
        empirical,
        max_abs_deviation: max_abs,
        max_standard_errors: max_se,
        draws,
    })
}

/// Small binomial-tree problem used by the estimator-vs-enumeration check:
/// contract kind cycles with `seed`, network weights are random.
pub fn tree_instance(seed: u64, days: usize) -> (ParamStore, ContractSpec, MarketParams, f64) {
    let mp = MarketParams {
        s0: 10.0,
        sigma: 0.4,
        days,
        dt: 1.0,
        volume: vec![200.0; days],
        eta: 0.1,
        cost_exponent: 0.75,
        ..MarketParams::reference()
    };
    let kind = ContractKind::ALL[(seed % 3) as usize];
    let terms = match kind {
        ContractKind::FixedShares => ContractTerms::FixedShares { shares: 600.0 },
        ContractKind::FixedNotional => ContractTerms::FixedNotional {
            notional: 6000.0,
            zeta: 0.8,
        },
        ContractKind::ProfitSharing => ContractTerms::ProfitSharing {
            notional: 6000.0,
            alpha: 0.25,
            kappa: 0.005,
            beta: 0.05,
        },
    };
    let spec = ContractSpec {
        terms,
        exercise_window: Some((days / 3 + 1, days - 1)),
        penalty_c: 1e-3,
        ..ContractSpec::reference(kind)
    };
    let mut rng = path_rng(seed, u64::MAX);
    let nu = rng.random_range(2.0..8.0);
    let frontier = rng.random_range(0.2..0.9);
    let params = ParamStore::init(kind, 8, nu, frontier, seed);
    (params, spec, mp, 1e-3)
}

/// Training estimator on `paths` binomial trajectories, evaluated in chunks
/// through the taped rollout.
pub fn monte_carlo_on_tree(
    params: &ParamStore,
    spec: &ContractSpec,
    mp: &MarketParams,
    gamma: f64,
    paths: usize,
    seed: u64,
) -> Result<MonteCarloObjective> {
    const CHUNK: usize = 1 << 14;
    let chunks = paths.div_ceil(CHUNK);
    let parts: Result<Vec<(Vec<f64>, Vec<f64>)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(paths - c * CHUNK);
            let batch = simulate_binomial_paths(mp, count, derive_seed(seed, c as u64))?;
            let r = rollout(&batch, params, spec, mp, gamma)?;
            Ok((r.weighted, r.weighted_sq))
        })
        .collect();
    let (mut a, mut b) = (Vec::with_capacity(paths), Vec::with_capacity(paths));
    for (x, y) in parts? {
        a.extend(x);
        b.extend(y);
    }
    Ok(monte_carlo_objective(&a, &b, gamma))
}

/// One row of the oracle self-check table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub reference: f64,
    /// Allowed |value − reference|.
    pub tolerance: f64,
}

impl OracleCheck {
    fn new(name: impl Into<String>, value: f64, reference: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: (value - reference).abs() <= tolerance,
            value,
            reference,
            tolerance,
        }
    }
}

/// Cross-checks between the oracles and the production code paths.
/// `mc_paths` sets the Monte-Carlo sample size of the tree comparisons.
pub fn run_oracle_checks(mc_paths: usize, seed: u64) -> Result<Vec<OracleCheck>> {
    let mut out = Vec::new();

    // Zero-volatility tree is the single deterministic rollout.
    let (params, spec, mut mp, gamma) = tree_instance(seed, 10);
    mp.sigma = 0.0;
    let pol = NetPolicy::new(params.clone());
    let tree = enumerate_tree_objective(&pol, &spec, &mp, gamma)?;
    let path = rollout_path(&pol, &vec![mp.s0; mp.days + 1], &spec, &mp)?;
    out.push(OracleCheck::new(
        "tree_sigma0_equals_rollout",
        tree.mean,
        path.weighted_pnl(),
        1e-9 * tree.mean.abs().max(1.0),
    ));

    // Hard-stop enumeration equals backward induction.
    let (params, spec, mp, _) = tree_instance(seed, 10);
    let hard = HardStop(NetPolicy::new(params));
    let tree = enumerate_tree_objective(&hard, &spec, &mp, 0.0)?;
    let bi = backward_induction_value(&hard, &spec, &mp)?;
    out.push(OracleCheck::new(
        "tree_equals_backward_induction",
        tree.objective,
        bi,
        1e-9 * bi.abs().max(1.0),
    ));

    // Training estimator vs exact enumeration, within four standard errors.
    for k in 0..3 {
        let (params, spec, mp, gamma) = tree_instance(seed.wrapping_add(k), 10);
        let exact = enumerate_tree_objective(&NetPolicy::new(params.clone()), &spec, &mp, gamma)?;
        let mc = monte_carlo_on_tree(&params, &spec, &mp, gamma, mc_paths, seed.wrapping_add(100 + k))?;
        out.push(OracleCheck::new(
            format!("estimator_vs_tree_{}", spec.kind()),
            mc.objective,
            exact.objective,
            4.0 * mc.std_error,
        ));
    }

    // Zero-volatility program: Newton vs equal-rate bisection, and the naive
    // schedule's closed-form cost.
    let mp = MarketParams {
        sigma: 0.0,
        ..MarketParams::reference()
    };
    let spec = ContractSpec::reference_fixed_shares();
    let sol = zero_vol_schedule(&spec, &mp)?;
    let shares = spec.size();
    let u = zero_vol_equal_rate(shares, spec.penalty_c, &mp)?;
    let spread = sol.rates.iter().map(|v| (v - u).abs()).fold(0.0, f64::max);
    out.push(OracleCheck::new("zero_vol_newton_vs_bisection", spread / u, 0.0, 1e-8));
    out.push(OracleCheck::new("zero_vol_gradient_norm", sol.gradient_norm, 0.0, 1e-10));
    let days = mp.days as f64;
    let rho = shares / days / mp.volume[0];
    let closed = days * mp.eta * rho.powf(1.0 + mp.cost_exponent) * mp.volume[0] * mp.dt;
    let naive = schedule_cost(&vec![shares / days; mp.days], shares, spec.penalty_c, &mp);
    out.push(OracleCheck::new("naive_cost_closed_form", naive, closed, 1e-10 * closed));

    // Relaxed weights vs sampled stopping.
    for (i, p) in [vec![0.5, 1.0], vec![0.3, 0.4, 1.0], vec![0.1, 0.0, 0.7, 0.2, 1.0]].iter().enumerate() {
        let r = bernoulli_identity_check(p, 1_000_000, derive_seed(seed, 7 + i as u64))?;
        out.push(OracleCheck::new(format!("bernoulli_identity_{}", p.len()), r.max_standard_errors, 0.0, 4.0));
    }
    Ok(out)
}

/// Rounds a net policy's stopping probability to 0/1.
struct HardStop(NetPolicy);

impl Policy for HardStop {
    fn trade_rate(&self, st: &MarketState, spec: &ContractSpec, mp: &MarketParams) -> Result<f64> {
        self.0.trade_rate(st, spec, mp)
    }
    fn stop_probability(&self, st: &MarketState, spec: &ContractSpec, mp: &MarketParams) -> Result<f64> {
        Ok(self.0.stop_probability(st, spec, mp)?.round())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::HedgedNaivePolicy;

    fn tiny_market(days: usize) -> MarketParams {
        MarketParams {
            s0: 10.0,
            sigma: 0.4,
            volume: vec![1000.0; days],
            days,
            ..MarketParams::reference()
        }
    }

    fn tiny_spec(days: usize) -> ContractSpec {
        ContractSpec {
            terms: ContractTerms::FixedShares { shares: 600.0 },
            exercise_window: Some((1, days - 1)),
            penalty_c: 1e-3,
            ..ContractSpec::reference_fixed_shares()
        }
    }

    /// Stops once the inventory passes a fixed fraction of `Q`.
    struct Threshold(f64, NetPolicy);

    impl Policy for Threshold {
        fn trade_rate(&self, st: &MarketState, spec: &ContractSpec, mp: &MarketParams) -> Result<f64> {
            self.1.trade_rate(st, spec, mp)
        }
        fn stop_probability(&self, st: &MarketState, spec: &ContractSpec, mp: &MarketParams) -> Result<f64> {
            let ContractTerms::FixedShares { shares } = spec.terms else { unreachable!() };
            Ok(if st.n == mp.days || spec.in_window(st.n) && st.q >= self.0 * shares && st.a > st.s {
                1.0
            } else {
                0.0
            })
        }
    }

    #[test]
    fn zero_sigma_tree_is_one_path() {
        let mut mp = tiny_market(5);
        mp.sigma = 0.0;
        let spec = tiny_spec(5);
        let pol = NetPolicy::new(ParamStore::init(ContractKind::FixedShares, 4, 3.0, 0.5, 2));
        let t = enumerate_tree_objective(&pol, &spec, &mp, 0.01).unwrap();
        let out = rollout_path(&pol, &[10.0; 6], &spec, &mp).unwrap();
        assert_eq!(t.leaves, 1);
        assert!((t.mean - out.weighted_pnl()).abs() < 1e-12 * t.mean.abs().max(1.0));
        assert!((t.second_moment - out.weighted_pnl_sq()).abs() < 1e-9 * t.second_moment.abs().max(1.0));
    }

    #[test]
    fn three_day_naive_tree_matches_hand_enumeration() {
        let mp = tiny_market(3);
        let spec = tiny_spec(3);
        let pol = NetPolicy::naive(ContractKind::FixedShares);
        let t = enumerate_tree_objective(&pol, &spec, &mp, 0.0).unwrap();
        assert_eq!(t.leaves, 8);
        // Each leaf: buy Q/3 per day at the next price; hedged settlement.
        let mut total = 0.0;
        for bits in 0..8u32 {
            let mut s = 10.0;
            let mut prices = vec![s];
            for d in 0..3 {
                s += if bits >> d & 1 == 1 { 0.4 } else { -0.4 };
                prices.push(s);
            }
            let q = 600.0;
            let avg = (prices[1] + prices[2] + prices[3]) / 3.0;
            let x: f64 = (1..=3).map(|k| q / 3.0 * prices[k] + 0.1 * (0.2f64).powf(1.75) * 1000.0).sum();
            total += q * avg - x;
        }
        assert!((t.objective - total / 8.0).abs() < 1e-9, "{} vs {}", t.objective, total / 8.0);
    }

    #[test]
    fn enumeration_matches_backward_induction_for_hard_stops() {
        let mp = tiny_market(8);
        let spec = tiny_spec(8);
        for (seed, frac) in [(1u64, 0.3), (2, 0.5), (3, 0.0)] {
            let pol = Threshold(frac, NetPolicy::new(ParamStore::init(ContractKind::FixedShares, 6, 1.0, 0.0, seed)));
            let t = enumerate_tree_objective(&pol, &spec, &mp, 0.0).unwrap();
            let b = backward_induction_value(&pol, &spec, &mp).unwrap();
            assert!((t.objective - b).abs() <= 1e-10 * b.abs().max(1.0), "{} vs {b}", t.objective);
        }
    }

    #[test]
    fn backward_induction_rejects_soft_stops() {
        let mp = tiny_market(4);
        let spec = tiny_spec(4);
        let mut params = ParamStore::naive(ContractKind::FixedShares, 2);
        params.stop.b2.set(0, 0, 0.0);
        params.nu = 1.0;
        assert!(backward_induction_value(&NetPolicy::new(params), &spec, &mp).is_err());
    }

    #[test]
    fn deep_trees_are_refused() {
        let mp = tiny_market(13);
        let spec = tiny_spec(13);
        assert!(enumerate_tree_objective(&HedgedNaivePolicy, &spec, &mp, 0.0).is_err());
    }

    #[test]
    fn binomial_paths_move_by_sigma() {
        let mp = tiny_market(6);
        let b = simulate_binomial_paths(&mp, 50, 3).unwrap();
        for i in 0..50 {
            for w in b.path(i).windows(2) {
                assert!(((w[1] - w[0]).abs() - 0.4).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn monte_carlo_standard_error() {
        let a = [1.0, 3.0, 5.0, 7.0];
        let b = [1.0, 9.0, 25.0, 49.0];
        let r = monte_carlo_objective(&a, &b, 0.0);
        assert_eq!(r.objective, 4.0);
        let sd = ((9.0f64 + 1.0 + 1.0 + 9.0) / 3.0).sqrt();
        assert!((r.std_error - sd / 2.0).abs() < 1e-12);
    }

    fn zero_vol_market() -> MarketParams {
        MarketParams {
            sigma: 0.0,
            ..MarketParams::reference()
        }
    }

    #[test]
    fn zero_vol_newton_matches_bisection() {
        let mp = zero_vol_market();
        let spec = ContractSpec::reference_fixed_shares();
        let sol = zero_vol_schedule(&spec, &mp).unwrap();
        assert!(sol.gradient_norm <= 1e-10);
        let u = zero_vol_equal_rate(2e7, 2e-7, &mp).unwrap();
        for &v in &sol.rates {
            assert!((v - u).abs() < 1e-6 * u, "{v} vs {u}");
        }
        let naive = schedule_cost(&vec![2e7 / 63.0; 63], 2e7, 2e-7, &mp);
        let rho: f64 = 2e7 / 63.0 / 4e6;
        assert!((naive / (63.0 * 0.1 * rho.powf(1.75) * 4e6) - 1.0).abs() < 1e-12);
        assert!(sol.cost < naive);
        assert!(sol.residual > 0.0);
    }

    #[test]
    fn zero_vol_stiff_penalty_buys_everything_evenly() {
        let mp = zero_vol_market();
        let mut spec = ContractSpec::reference_fixed_shares();
        spec.penalty_c = 1e3;
        let sol = zero_vol_schedule(&spec, &mp).unwrap();
        assert!(sol.residual.abs() < 1e-6 * 2e7);
        for &v in &sol.rates {
            assert!((v / (2e7 / 63.0) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_vol_cheap_execution_leaves_nothing() {
        let mut mp = zero_vol_market();
        mp.eta = 1e-9;
        let sol = zero_vol_schedule(&ContractSpec::reference_fixed_shares(), &mp).unwrap();
        assert!(sol.residual.abs() < 1e-3 * 2e7, "{}", sol.residual);
    }

    #[test]
    fn zero_vol_varying_volume() {
        let mut mp = zero_vol_market();
        mp.volume = (0..63).map(|n| 3e6 + 2e4 * n as f64).collect();
        let sol = zero_vol_schedule(&ContractSpec::reference_fixed_shares(), &mp).unwrap();
        assert!(sol.gradient_norm <= 1e-10);
        // Higher volume days carry more of the schedule.
        assert!(sol.rates[62] > sol.rates[0]);
        let bumped: Vec<f64> = sol.rates.iter().enumerate().map(|(n, v)| v + if n == 5 { 1e3 } else { 0.0 }).collect();
        assert!(schedule_cost(&bumped, 2e7, 2e-7, &mp) > sol.cost);
    }

    #[test]
    fn estimator_agrees_with_enumeration() {
        for seed in 0..3 {
            let (params, spec, mp, gamma) = tree_instance(seed, 8);
            let exact = enumerate_tree_objective(&NetPolicy::new(params.clone()), &spec, &mp, gamma).unwrap();
            let mc = monte_carlo_on_tree(&params, &spec, &mp, gamma, 40_000, seed + 9).unwrap();
            assert!((mc.objective - exact.objective).abs() < 4.0 * mc.std_error, "{mc:?} vs {exact:?}");
        }
    }

    #[test]
    fn oracle_checks_pass() {
        let checks = run_oracle_checks(20_000, 1).unwrap();
        for c in &checks {
            assert!(c.passed, "{c:?}");
        }
        assert_eq!(checks.len(), 11);
    }

    #[test]
    fn bernoulli_examples() {
        let r = bernoulli_identity_check(&[1.0], 1000, 1).unwrap();
        assert_eq!(r.max_abs_deviation, 0.0);
        let r = bernoulli_identity_check(&[0.5, 1.0], 1_000_000, 2).unwrap();
        assert!(r.max_abs_deviation < 0.002);
        let r = bernoulli_identity_check(&[0.3, 0.4, 1.0], 1_000_000, 3).unwrap();
        assert!((r.analytic[1] - 0.28).abs() < 1e-15 && (r.analytic[2] - 0.42).abs() < 1e-15);
        assert!(r.max_abs_deviation < 0.002);
        assert!(bernoulli_identity_check(&[0.3, 0.4], 10, 3).is_err());
    }
}
