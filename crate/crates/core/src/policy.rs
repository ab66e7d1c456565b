//! Trading-rate and stopping-probability policies, evaluated one state at a
//! time. The batched, differentiable counterpart lives in `training`; both
//! must agree to rounding.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::autodiff::{clipped_logistic, ParamStore, DEFAULT_HIDDEN};
use crate::contracts::{ContractKind, ContractSpec, ContractTerms};
use crate::error::{Error, Result};
use crate::market::{path_rng, step_state, MarketParams, MarketState};

/// Bounds on the trading net's raw output, as multiples of `N` (lower) and
/// absolute (upper).
pub const RAW_TRADE_MIN_PER_DAY: f64 = -0.99;
pub const RAW_TRADE_MAX: f64 = 10.0;

pub trait Policy: Send + Sync {
    /// Shares bought on day `n → n+1` (negative for sales).
    fn trade_rate(&self, st: &MarketState, spec: &ContractSpec, mp: &MarketParams) -> Result<f64>;

    /// Probability of settling on day `n`, given no earlier settlement.
    fn stop_probability(&self, st: &MarketState, spec: &ContractSpec, mp: &MarketParams) -> Result<f64>;
}

/// Dimensionless, centered inputs of the trading net.
pub fn trade_features(st: &MarketState, spec: &ContractSpec, mp: &MarketParams) -> Vec<f64> {
    let t = st.n as f64 / mp.days as f64 - 0.5;
    let price = st.s / mp.s0 - 1.0;
    let spread = (st.a - st.s) / mp.s0;
    match spec.terms {
        ContractTerms::FixedShares { shares } => vec![t, price, spread, st.q / shares - 0.5],
        ContractTerms::FixedNotional { notional, .. } => {
            vec![t, price, spread, st.q * st.a / notional - 0.5]
        }
        ContractTerms::ProfitSharing { notional, .. } => vec![
            t,
            price,
            spread,
            st.x / notional - 0.5,
            st.q * mp.s0 / notional - 0.5,
        ],
    }
}

/// Inputs of the stopping net.
pub fn stop_features(st: &MarketState, spec: &ContractSpec, mp: &MarketParams) -> Vec<f64> {
    let t = st.n as f64 / mp.days as f64 - 0.5;
    let price = st.s / mp.s0 - 1.0;
    let spread = (st.a - st.s) / mp.s0;
    match spec.terms {
        ContractTerms::ProfitSharing { notional, .. } => {
            vec![t, price, spread, st.q * mp.s0 / notional - 0.5]
        }
        _ => vec![t, price, spread],
    }
}

/// Progress ratio compared against the stopping frontier: `q/Q`, `qA/F` or
/// `X/F`.
pub fn stop_ratio(st: &MarketState, spec: &ContractSpec) -> f64 {
    match spec.terms {
        ContractTerms::FixedShares { shares } => st.q / shares,
        ContractTerms::FixedNotional { notional, .. } => st.q * st.a / notional,
        ContractTerms::ProfitSharing { notional, .. } => st.x / notional,
    }
}

/// Maps a raw trading-net output to a daily rate, before participation
/// bounds.
pub fn rate_from_raw(raw: f64, st: &MarketState, spec: &ContractSpec, mp: &MarketParams) -> Result<f64> {
    let days = mp.days as f64;
    let n = st.n as f64;
    let raw = raw.clamp(RAW_TRADE_MIN_PER_DAY * days, RAW_TRADE_MAX);
    let v = match spec.terms {
        ContractTerms::FixedShares { shares } => shares * ((1.0 + raw) * (n + 1.0) / days).min(1.0) - st.q,
        ContractTerms::FixedNotional { notional, .. } => {
            if !(st.a > 0.0) {
                return Err(Error::Numerical(format!(
                    "fixed-notional trading needs A > 0, got {} on day {}",
                    st.a, st.n
                )));
            }
            notional / st.a * ((n + 1.0) / days) * (1.0 + raw) - st.q
        }
        ContractTerms::ProfitSharing { notional, .. } => {
            if st.x < notional {
                if !(st.s > 0.0) {
                    return Err(Error::Numerical(format!(
                        "profit-sharing trading needs S > 0, got {} on day {}",
                        st.s, st.n
                    )));
                }
                let frac = ((1.0 + raw) / (days - n)).clamp(0.0, 1.0);
                (notional - st.x) / st.s * frac
            } else {
                0.0
            }
        }
    };
    Ok(spec.clamp_rate(v, mp.volume[st.n]))
}

/// Neural policy backed by a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetPolicy {
    pub params: ParamStore,
}

impl NetPolicy {
    pub fn new(params: ParamStore) -> Self {
        Self { params }
    }

    /// Zero trading perturbation, no early exercise.
    pub fn naive(kind: ContractKind) -> Self {
        Self::new(ParamStore::naive(kind, DEFAULT_HIDDEN))
    }

    fn check(&self, spec: &ContractSpec) -> Result<()> {
        if self.params.kind != spec.kind() {
            return Err(Error::Mismatch(format!(
                "policy trained for {} evaluated on a {} contract",
                self.params.kind,
                spec.kind()
            )));
        }
        Ok(())
    }
}

impl Policy for NetPolicy {
    fn trade_rate(&self, st: &MarketState, spec: &ContractSpec, mp: &MarketParams) -> Result<f64> {
        self.check(spec)?;
        if st.n >= mp.days {
            return Err(Error::Contract(format!("no trading on day {} of {}", st.n, mp.days)));
        }
        let raw = self.params.trade.eval(&trade_features(st, spec, mp))?;
        rate_from_raw(raw, st, spec, mp)
    }

    fn stop_probability(&self, st: &MarketState, spec: &ContractSpec, mp: &MarketParams) -> Result<f64> {
        self.check(spec)?;
        if st.n > mp.days {
            return Err(Error::Contract(format!("day {} past expiry {}", st.n, mp.days)));
        }
        if st.n == mp.days {
            return Ok(1.0);
        }
        if !spec.in_window(st.n) {
            return Ok(0.0);
        }
        let frontier = self.params.stop.eval(&stop_features(st, spec, mp))?;
        Ok(clipped_logistic(self.params.nu * (stop_ratio(st, spec) - frontier)))
    }
}

/// Naive schedule that settles at the first window day on which the
/// progress ratio has reached 1 (immediately once the contract is filled).
#[derive(Debug, Clone, Copy, Default)]
pub struct HedgedNaivePolicy;

impl Policy for HedgedNaivePolicy {
    fn trade_rate(&self, st: &MarketState, spec: &ContractSpec, mp: &MarketParams) -> Result<f64> {
        if st.n >= mp.days {
            return Err(Error::Contract(format!("no trading on day {} of {}", st.n, mp.days)));
        }
        rate_from_raw(0.0, st, spec, mp)
    }

    fn stop_probability(&self, st: &MarketState, spec: &ContractSpec, mp: &MarketParams) -> Result<f64> {
        if st.n == mp.days || spec.in_window(st.n) && stop_ratio(st, spec) >= 1.0 {
            Ok(1.0)
        } else {
            Ok(0.0)
        }
    }
}

/// Relaxed rollout of one price path: every state, trade, stopping
/// probability and the settlement PnL on each admissible day.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutcome {
    /// States for days `0..=N`.
    pub states: Vec<MarketState>,
    /// Trades for days `0..N`.
    pub trades: Vec<f64>,
    /// `p_n` for days `0..=N`; `p_N = 1`.
    pub stop_probs: Vec<f64>,
    /// Settlement PnL, `0` on days where settlement is not allowed.
    pub pnls: Vec<f64>,
    /// `w_n = Π_{k<n}(1 − p_k) p_n`.
    pub weights: Vec<f64>,
}

impl PathOutcome {
    /// `Σ w_n PnL_n`.
    pub fn weighted_pnl(&self) -> f64 {
        self.weights.iter().zip(&self.pnls).map(|(w, p)| w * p).sum()
    }

    /// `Σ w_n PnL_n²`.
    pub fn weighted_pnl_sq(&self) -> f64 {
        self.weights.iter().zip(&self.pnls).map(|(w, p)| w * p * p).sum()
    }

    /// First day `n` with `u_n ≤ p_n`.
    pub fn sampled_stop(&self, uniforms: &[f64]) -> usize {
        let last = self.stop_probs.len() - 1;
        (0..last)
            .find(|&n| self.stop_probs[n] > 0.0 && uniforms[n] <= self.stop_probs[n])
            .unwrap_or(last)
    }
}

/// Runs `policy` along `prices` (length `N + 1`).
pub fn rollout_path(
    policy: &dyn Policy,
    prices: &[f64],
    spec: &ContractSpec,
    mp: &MarketParams,
) -> Result<PathOutcome> {
    let days = mp.days;
    if prices.len() != days + 1 {
        return Err(Error::Mismatch(format!(
            "path has {} prices, market has {} days",
            prices.len(),
            days
        )));
    }
    let mut st = MarketState::initial(prices[0]);
    let mut states = Vec::with_capacity(days + 1);
    let mut trades = Vec::with_capacity(days);
    let mut stop_probs = Vec::with_capacity(days + 1);
    let mut pnls = Vec::with_capacity(days + 1);
    let mut weights = Vec::with_capacity(days + 1);
    let mut survive = 1.0;
    for n in 0..=days {
        let p = policy.stop_probability(&st, spec, mp)?;
        let pnl = if spec.exercise_allowed(n, days) {
            spec.pnl(&st, mp.s0)?
        } else {
            0.0
        };
        weights.push(survive * p);
        survive *= 1.0 - p;
        stop_probs.push(p);
        pnls.push(pnl);
        states.push(st);
        if n < days {
            let v = policy.trade_rate(&st, spec, mp)?;
            trades.push(v);
            st = step_state(&st, v, prices[n + 1], mp)?;
        }
    }
    Ok(PathOutcome {
        states,
        trades,
        stop_probs,
        pnls,
        weights,
    })
}

/// Uniforms `ε̃_0..ε̃_N` used to sample the stopping day of path `index`.
pub fn stop_uniforms(seed: u64, index: usize, days: usize) -> Vec<f64> {
    let mut rng = path_rng(seed, index as u64);
    (0..=days).map(|_| rng.random::<f64>()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub path_id: usize,
    pub day: usize,
    pub price: f64,
    pub average: f64,
    pub inventory: f64,
    pub cash: f64,
    pub trade: f64,
    pub stop_prob: f64,
    pub stopped: bool,
}

/// Strategy trace of a path up to its sampled settlement day. `trade` is the
/// purchase made after the row's state; zero on the settlement row.
pub fn trace_rows(path_id: usize, outcome: &PathOutcome, stop_day: usize) -> Vec<TraceRow> {
    (0..=stop_day)
        .map(|n| {
            let st = &outcome.states[n];
            TraceRow {
                path_id,
                day: n,
                price: st.s,
                average: st.a,
                inventory: st.q,
                cash: st.x,
                trade: if n < stop_day { outcome.trades[n] } else { 0.0 },
                stop_prob: outcome.stop_probs[n],
                stopped: n == stop_day,
            }
        })
        .collect()
}

pub fn write_trace_csv(rows: &[TraceRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "path_id", "day", "price", "average", "inventory", "cash", "trade", "stop_prob", "stopped",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{simulate_paths, MarketParams};
    use proptest::prelude::*;

    fn flat_market() -> MarketParams {
        MarketParams {
            sigma: 0.0,
            ..MarketParams::reference()
        }
    }

    #[test]
    fn naive_fixed_shares_buys_q_over_n() {
        let mp = flat_market();
        let spec = ContractSpec::reference_fixed_shares();
        let pol = NetPolicy::naive(ContractKind::FixedShares);
        let q = 2e7;
        for n in 0..63 {
            let st = MarketState {
                n,
                q: n as f64 * q / 63.0,
                ..MarketState::initial(45.0)
            };
            let v = pol.trade_rate(&st, &spec, &mp).unwrap();
            assert!((v - q / 63.0).abs() < 1e-6, "day {n}: {v}");
        }
        let full = MarketState {
            n: 62,
            q,
            ..MarketState::initial(45.0)
        };
        assert_eq!(pol.trade_rate(&full, &spec, &mp).unwrap(), 0.0);
    }

    #[test]
    fn naive_inventory_path_and_terminal_hedge() {
        let mp = MarketParams::reference();
        let spec = ContractSpec::reference_fixed_shares();
        let pol = NetPolicy::naive(ContractKind::FixedShares);
        let batch = simulate_paths(&mp, 4, 3).unwrap();
        for i in 0..batch.len() {
            let out = rollout_path(&pol, batch.path(i), &spec, &mp).unwrap();
            for (n, st) in out.states.iter().enumerate() {
                let target = n as f64 * 2e7 / 63.0;
                assert!((st.q - target).abs() <= 1e-6 * 2e7);
            }
            assert_eq!(out.weights[63], 1.0);
            assert!((out.states[63].q - 2e7).abs() < 1e-6);
        }
    }

    #[test]
    fn naive_fixed_notional_follows_target() {
        let mp = MarketParams::reference();
        let spec = ContractSpec::reference_fixed_notional();
        let pol = NetPolicy::naive(ContractKind::FixedNotional);
        let batch = simulate_paths(&mp, 1, 8).unwrap();
        let out = rollout_path(&pol, batch.path(0), &spec, &mp).unwrap();
        for n in 0..63 {
            let expect = (n + 1) as f64 * 9e8 / (63.0 * out.states[n].a);
            assert!((out.states[n + 1].q - expect).abs() < 1e-6 * expect);
        }
    }

    #[test]
    fn naive_profit_sharing_spreads_cash() {
        let mp = flat_market();
        let spec = ContractSpec::reference_profit_sharing();
        let pol = NetPolicy::naive(ContractKind::ProfitSharing);
        let prices = vec![45.0; 64];
        let out = rollout_path(&pol, &prices, &spec, &mp).unwrap();
        for n in 0..63 {
            let spent = out.trades[n] * 45.0;
            let expect = (9e8 - out.states[n].x) / (63 - n) as f64;
            assert!((spent - expect).abs() < 1e-6 * expect);
        }
        let x_end = out.states[63].x;
        let costs = x_end - 45.0 * out.states[63].q;
        let last_cost = mp.trading_cost(62, out.trades[62]);
        assert!(costs > 0.0);
        assert!(x_end >= 9e8 && (x_end - 9e8 - last_cost).abs() < 1e-3);
    }

    #[test]
    fn profit_sharing_stops_trading_once_cash_is_spent() {
        let mp = MarketParams::reference();
        let spec = ContractSpec::reference_profit_sharing();
        let pol = NetPolicy::new(ParamStore::init(ContractKind::ProfitSharing, 8, 10.0, 1.0, 1));
        let st = MarketState {
            n: 10,
            s: 44.0,
            a: 45.0,
            x: 9e8,
            q: 2e7,
        };
        assert_eq!(pol.trade_rate(&st, &spec, &mp).unwrap(), 0.0);
    }

    #[test]
    fn stopping_probability_cases() {
        let mp = MarketParams::reference();
        let spec = ContractSpec::reference_fixed_shares();
        let mut params = ParamStore::naive(ContractKind::FixedShares, 4);
        params.stop.b2.set(0, 0, 0.3);
        params.nu = 10.0;
        let pol = NetPolicy::new(params);
        let mut st = MarketState {
            n: 63,
            q: 0.0,
            ..MarketState::initial(45.0)
        };
        assert_eq!(pol.stop_probability(&st, &spec, &mp).unwrap(), 1.0);
        st.n = 10;
        st.q = 2e7;
        assert_eq!(pol.stop_probability(&st, &spec, &mp).unwrap(), 0.0);
        st.n = 30;
        st.q = 0.5 * 2e7;
        assert_eq!(pol.stop_probability(&st, &spec, &mp).unwrap(), 1.0);
        st.q = 0.3 * 2e7;
        assert!((pol.stop_probability(&st, &spec, &mp).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mismatched_policy_is_rejected() {
        let mp = MarketParams::reference();
        let pol = NetPolicy::naive(ContractKind::FixedShares);
        let spec = ContractSpec::reference_profit_sharing();
        let err = pol
            .trade_rate(&MarketState::initial(45.0), &spec, &mp)
            .unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn out_of_range_day_is_a_contract_error() {
        let mp = MarketParams::reference();
        let spec = ContractSpec::reference_fixed_shares();
        let pol = NetPolicy::naive(ContractKind::FixedShares);
        let st = MarketState {
            n: 63,
            ..MarketState::initial(45.0)
        };
        assert!(matches!(pol.trade_rate(&st, &spec, &mp), Err(Error::Contract(_))));
    }

    #[test]
    fn hedged_naive_has_flat_pnl() {
        let mp = MarketParams::reference();
        let spec = ContractSpec::reference_fixed_shares();
        let batch = simulate_paths(&mp, 8, 2).unwrap();
        let pnls: Vec<f64> = (0..8)
            .map(|i| {
                rollout_path(&HedgedNaivePolicy, batch.path(i), &spec, &mp)
                    .unwrap()
                    .weighted_pnl()
            })
            .collect();
        let cost = 63.0 * 0.1 * (2e7 / 63.0 / 4e6_f64).powf(1.75) * 4e6;
        for p in pnls {
            assert!((p + cost).abs() < 1e-3, "{p} vs {}", -cost);
        }
    }

    #[test]
    fn sampled_stop_picks_first_success() {
        let out = PathOutcome {
            states: vec![],
            trades: vec![],
            stop_probs: vec![0.0, 0.2, 0.9, 1.0],
            pnls: vec![0.0; 4],
            weights: vec![0.0; 4],
        };
        assert_eq!(out.sampled_stop(&[0.0, 0.5, 0.95, 0.3]), 3);
        assert_eq!(out.sampled_stop(&[0.0, 0.1, 0.95, 0.3]), 1);
        assert_eq!(out.sampled_stop(&[0.0, 0.5, 0.9, 0.3]), 2);
    }

    #[test]
    fn trace_csv_schema() {
        let mp = MarketParams::reference().with_days(3);
        let spec = ContractSpec {
            exercise_window: Some((1, 2)),
            ..ContractSpec::reference_fixed_shares()
        };
        let out = rollout_path(&NetPolicy::naive(ContractKind::FixedShares), &[45.0, 46.0, 44.0, 45.0], &spec, &mp)
            .unwrap();
        let rows = trace_rows(0, &out, 3);
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("path_id,day,price,average,inventory,cash,trade,stop_prob,stopped\n"));
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().last().unwrap().ends_with(",true"));
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(seed in 0u64..1000, hidden in 1usize..6, bias in -0.5f64..1.5) {
            let mp = MarketParams::reference().with_days(12);
            let spec = ContractSpec { exercise_window: Some((2, 11)), ..ContractSpec::reference_fixed_shares() };
            let pol = NetPolicy::new(ParamStore::init(ContractKind::FixedShares, hidden, 3.0, bias, seed));
            let batch = simulate_paths(&mp, 3, seed).unwrap();
            for i in 0..3 {
                let out = rollout_path(&pol, batch.path(i), &spec, &mp).unwrap();
                let s: f64 = out.weights.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(out.weights.iter().all(|w| (0.0..=1.0).contains(w)));
            }
        }

        #[test]
        fn profit_sharing_never_sells(seed in 0u64..1000, hidden in 1usize..8) {
            let mp = MarketParams::reference().with_days(20);
            let spec = ContractSpec { exercise_window: Some((5, 19)), ..ContractSpec::reference_profit_sharing() };
            let mut params = ParamStore::init(ContractKind::ProfitSharing, hidden, 10.0, 0.5, seed);
            for w in params.trade.w2.as_mut_slice() { *w *= 1e3; }
            let pol = NetPolicy::new(params);
            let batch = simulate_paths(&mp, 4, seed).unwrap();
            for i in 0..4 {
                let out = rollout_path(&pol, batch.path(i), &spec, &mp).unwrap();
                prop_assert!(out.trades.iter().all(|&v| v >= 0.0));
                for n in 0..20 {
                    let st = &out.states[n];
                    prop_assert!(out.trades[n] * st.s <= (9e8 - st.x).max(0.0) * (1.0 + 1e-12));
                }
            }
        }

        #[test]
        fn stopping_is_monotone_in_ratio(seed in 0u64..1000, q1 in 0.0f64..1.2, dq in 0.0f64..0.5) {
            let mp = MarketParams::reference();
            let spec = ContractSpec::reference_fixed_shares();
            let pol = NetPolicy::new(ParamStore::init(ContractKind::FixedShares, 6, 7.0, 0.6, seed));
            let mk = |r: f64| MarketState { n: 40, s: 44.0, a: 45.0, x: 0.0, q: r * 2e7 };
            let p1 = pol.stop_probability(&mk(q1), &spec, &mp).unwrap();
            let p2 = pol.stop_probability(&mk(q1 + dq), &spec, &mp).unwrap();
            prop_assert!(p2 >= p1);
        }
    }
}
