//! Batched rollout recorded on a tape: one column per trajectory, one block
//! of nodes per day, so the objective is differentiable end to end through
//! the recurrent state `(q, X)`.

use crate::autodiff::{Array, ParamStore, ParamVars, Tape, Var};
use crate::contracts::{ContractSpec, ContractTerms};
use crate::error::{Error, Result};
use crate::market::{MarketParams, PathBatch};
use crate::policy::{RAW_TRADE_MAX, RAW_TRADE_MIN_PER_DAY};

/// Per-path relaxed sums on the tape plus the forward values needed for
/// diagnostics.
pub struct TapedRollout<'t> {
    /// `Σ_n w_n PnL_n`, `1 × I`.
    pub weighted: Var<'t>,
    /// `Σ_n w_n PnL_n²`, `1 × I`.
    pub weighted_sq: Var<'t>,
    /// `w_n` per day, each `1 × I`.
    pub weights: Vec<Array>,
    /// `PnL_n` per day (zero where settlement is not allowed), each `1 × I`.
    pub pnls: Vec<Array>,
    /// Trades per day, each `1 × I`.
    pub trades: Vec<Array>,
}

fn row(value: f64, cols: usize) -> Array {
    Array::filled(1, cols, value)
}

fn settlement_pnl<'t>(
    spec: &ContractSpec,
    mp: &MarketParams,
    n: usize,
    s: &Array,
    a: &Array,
    x: Var<'t>,
    q: Var<'t>,
) -> Result<Var<'t>> {
    let c = spec.penalty_c;
    Ok(match spec.terms {
        ContractTerms::FixedShares { shares } => {
            let rest = shares - q;
            let bought_at_avg = a.map(|v| shares * v);
            (-x - rest.mul_array(s) - rest.square() * c).add_array(&bought_at_avg)
        }
        ContractTerms::FixedNotional { notional, .. } => {
            if let Some(i) = a.as_slice().iter().position(|&v| !(v > 0.0)) {
                return Err(Error::Numerical(format!(
                    "fixed-notional settlement needs A > 0; path {i} has A = {} on day {n}",
                    a.as_slice()[i]
                )));
            }
            let rest = (-q).add_array(&a.map(|v| notional / v));
            notional - x - rest.mul_array(s) - rest.square() * c
        }
        ContractTerms::ProfitSharing {
            notional,
            alpha,
            kappa,
            beta,
        } => {
            let hurdle = a.map(|v| v - kappa * mp.s0);
            let gain = q.mul_array(&hurdle) - notional;
            let shortfall = notional - x;
            gain.relu() * alpha - (-gain).relu() * beta - shortfall.square() * c
        }
    })
}

/// Records the full `N`-day rollout of `vars` over `batch`.
pub fn record_rollout<'t>(
    tape: &'t Tape,
    vars: &ParamVars<'t>,
    batch: &PathBatch,
    spec: &ContractSpec,
    mp: &MarketParams,
) -> Result<TapedRollout<'t>> {
    let days = mp.days;
    if batch.days() != days {
        return Err(Error::Mismatch(format!(
            "path batch covers {} days, market has {days}",
            batch.days()
        )));
    }
    let cols = batch.len();
    let nf = days as f64;

    let mut q = tape.constant(row(0.0, cols));
    let mut x = tape.constant(row(0.0, cols));
    let mut survive: Option<Var<'t>> = None;
    let mut weighted: Option<Var<'t>> = None;
    let mut weighted_sq: Option<Var<'t>> = None;
    let mut weights = Vec::with_capacity(days + 1);
    let mut pnls = Vec::with_capacity(days + 1);
    let mut trades = Vec::with_capacity(days);

    for n in 0..=days {
        let s = batch.price_row(n);
        let a = batch.average_row(n);
        let time = tape.constant(row(n as f64 / nf - 0.5, cols));
        let price = tape.constant(s.map(|v| v / mp.s0 - 1.0));
        let spread = tape.constant(Array::from_fn(1, cols, |_, i| {
            (a.as_slice()[i] - s.as_slice()[i]) / mp.s0
        }));

        // Stopping weight for day n.
        let weight: Option<Var<'t>> = if n == days {
            Some(survive.unwrap_or_else(|| tape.constant(row(1.0, cols))))
        } else if spec.in_window(n) {
            let (inputs, ratio) = match spec.terms {
                ContractTerms::FixedShares { shares } => (vec![time, price, spread], q / shares),
                ContractTerms::FixedNotional { notional, .. } => {
                    (vec![time, price, spread], q.mul_array(&a) / notional)
                }
                ContractTerms::ProfitSharing { notional, .. } => {
                    let inv = q * mp.s0 / notional - 0.5;
                    (vec![time, price, spread, inv], x / notional)
                }
            };
            let frontier = vars.stop.forward(tape.vstack(&inputs))?;
            let p = (vars.nu * (ratio - frontier)).clipped_logistic();
            let w = match survive {
                Some(sv) => sv * p,
                None => p,
            };
            survive = Some(match survive {
                Some(sv) => sv * (1.0 - p),
                None => 1.0 - p,
            });
            Some(w)
        } else {
            None
        };

        match weight {
            Some(w) => {
                let pnl = settlement_pnl(spec, mp, n, &s, &a, x, q)?;
                let wp = w * pnl;
                let wp2 = wp * pnl;
                weighted = Some(match weighted {
                    Some(acc) => acc + wp,
                    None => wp,
                });
                weighted_sq = Some(match weighted_sq {
                    Some(acc) => acc + wp2,
                    None => wp2,
                });
                let wv = w.value();
                weights.push(if wv.cols() == cols { wv } else { row(wv.item(), cols) });
                pnls.push(pnl.value());
            }
            None => {
                weights.push(row(0.0, cols));
                pnls.push(row(0.0, cols));
            }
        }

        if n == days {
            break;
        }

        // Trade over day n → n+1.
        let inputs = match spec.terms {
            ContractTerms::FixedShares { shares } => vec![time, price, spread, q / shares - 0.5],
            ContractTerms::FixedNotional { notional, .. } => {
                vec![time, price, spread, q.mul_array(&a) / notional - 0.5]
            }
            ContractTerms::ProfitSharing { notional, .. } => vec![
                time,
                price,
                spread,
                x / notional - 0.5,
                q * mp.s0 / notional - 0.5,
            ],
        };
        let raw = vars
            .trade
            .forward(tape.vstack(&inputs))?
            .clamp_const(RAW_TRADE_MIN_PER_DAY * nf, RAW_TRADE_MAX);
        let step = (n + 1) as f64;
        let mut v = match spec.terms {
            ContractTerms::FixedShares { shares } => ((raw + 1.0) * step / nf).min_const(1.0) * shares - q,
            ContractTerms::FixedNotional { notional, .. } => {
                if let Some(i) = a.as_slice().iter().position(|&v| !(v > 0.0)) {
                    return Err(Error::Numerical(format!(
                        "fixed-notional trading needs A > 0; path {i} has A = {} on day {n}",
                        a.as_slice()[i]
                    )));
                }
                ((raw + 1.0) * (step / nf)).mul_array(&a.map(|v| notional / v)) - q
            }
            ContractTerms::ProfitSharing { notional, .. } => {
                let xv = x.value();
                let mut scale = Array::zeros(1, cols);
                for i in 0..cols {
                    if xv.as_slice()[i] < notional {
                        let si = s.as_slice()[i];
                        if !(si > 0.0) {
                            return Err(Error::Numerical(format!(
                                "profit-sharing trading needs S > 0; path {i} has S = {si} on day {n}"
                            )));
                        }
                        scale.as_mut_slice()[i] = 1.0 / si;
                    }
                }
                let frac = ((raw + 1.0) / (nf - n as f64)).min_const(1.0).max_const(0.0);
                (notional - x).mul_array(&scale) * frac
            }
        };
        let vol = mp.volume[n];
        if spec.rho_max.is_finite() {
            v = v.min_const(spec.rho_max * vol);
        }
        if spec.rho_min.is_finite() {
            v = v.max_const(spec.rho_min * vol);
        }
        trades.push(v.value());

        let s_next = batch.price_row(n + 1);
        let cost = (v / vol).abs().powf(1.0 + mp.cost_exponent) * (mp.eta * vol * mp.dt);
        q = q + v * mp.dt;
        x = x + v.mul_array(&s_next.map(|p| p * mp.dt)) + cost;
    }

    Ok(TapedRollout {
        weighted: weighted.expect("expiry is always a settlement day"),
        weighted_sq: weighted_sq.expect("expiry is always a settlement day"),
        weights,
        pnls,
        trades,
    })
}

/// `J = m1 − (γ/2)(m2 − m1²)` with `m1`, `m2` the batch means of the
/// per-path relaxed sums.
pub fn objective_meanvar<'t>(weighted: Var<'t>, weighted_sq: Var<'t>, gamma: f64) -> Var<'t> {
    let m1 = weighted.mean();
    let m2 = weighted_sq.mean();
    m1 - (m2 - m1 * m1) * (0.5 * gamma)
}

/// The same estimator on plain numbers.
pub fn meanvar(m1: f64, m2: f64, gamma: f64) -> f64 {
    m1 - 0.5 * gamma * (m2 - m1 * m1)
}

/// Forward values of a relaxed rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// `w_n^i`, `I × (N+1)`.
    pub weights: Array,
    /// `PnL_n^i`, `I × (N+1)`; zero on days without settlement.
    pub pnls: Array,
    /// Per-path `Σ_n w_n PnL_n`.
    pub weighted: Vec<f64>,
    /// Per-path `Σ_n w_n PnL_n²`.
    pub weighted_sq: Vec<f64>,
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    pub objective: f64,
}

fn stack_days(days: &[Array], paths: usize) -> Array {
    Array::from_fn(paths, days.len(), |i, n| days[n].as_slice()[i])
}

fn collect_result(r: &TapedRollout<'_>, objective: Var<'_>, paths: usize) -> RolloutResult {
    let weighted = r.weighted.value().into_vec();
    let weighted_sq = r.weighted_sq.value().into_vec();
    let m1 = weighted.iter().sum::<f64>() / paths as f64;
    let m2 = weighted_sq.iter().sum::<f64>() / paths as f64;
    RolloutResult {
        weights: stack_days(&r.weights, paths),
        pnls: stack_days(&r.pnls, paths),
        weighted,
        weighted_sq,
        mean: m1,
        second_moment: m2,
        variance: m2 - m1 * m1,
        objective: objective.item(),
    }
}

fn check_finite(r: &TapedRollout<'_>, objective: Var<'_>) -> Result<()> {
    if objective.item().is_finite() {
        return Ok(());
    }
    let w = r.weighted.value();
    let w2 = r.weighted_sq.value();
    let bad = (0..w.cols()).find(|&i| !w.as_slice()[i].is_finite() || !w2.as_slice()[i].is_finite());
    Err(Error::Numerical(match bad {
        Some(i) => format!("non-finite objective: path {i} has relaxed PnL {}", w.as_slice()[i]),
        None => "non-finite objective".to_string(),
    }))
}

/// Relaxed rollout values without gradients.
pub fn rollout(
    batch: &PathBatch,
    params: &ParamStore,
    spec: &ContractSpec,
    mp: &MarketParams,
    gamma: f64,
) -> Result<RolloutResult> {
    let tape = Tape::new();
    let vars = params.record(&tape);
    let r = record_rollout(&tape, &vars, batch, spec, mp)?;
    let j = objective_meanvar(r.weighted, r.weighted_sq, gamma);
    check_finite(&r, j)?;
    Ok(collect_result(&r, j, batch.len()))
}

/// Objective, its gradient in [`ParamStore::flatten`] order, and the tape's
/// branch pattern (for kink-aware finite differences).
pub struct ObjectiveGradient {
    pub result: RolloutResult,
    pub gradient: Vec<f64>,
    pub branches: Vec<u8>,
}

pub fn objective_gradient(
    batch: &PathBatch,
    params: &ParamStore,
    spec: &ContractSpec,
    mp: &MarketParams,
    gamma: f64,
) -> Result<ObjectiveGradient> {
    let tape = Tape::new();
    let vars = params.record(&tape);
    let r = record_rollout(&tape, &vars, batch, spec, mp)?;
    let j = objective_meanvar(r.weighted, r.weighted_sq, gamma);
    check_finite(&r, j)?;
    let grads = tape.backward(j)?;
    let gradient = vars.flat_gradient(&grads);
    if let Some(k) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("non-finite gradient at parameter {k}")));
    }
    Ok(ObjectiveGradient {
        result: collect_result(&r, j, batch.len()),
        gradient,
        branches: tape.branch_pattern(),
    })
}

/// Objective value and branch pattern only.
pub fn objective_with_branches(
    batch: &PathBatch,
    params: &ParamStore,
    spec: &ContractSpec,
    mp: &MarketParams,
    gamma: f64,
) -> Result<(f64, Vec<u8>)> {
    let tape = Tape::new();
    let vars = params.record(&tape);
    let r = record_rollout(&tape, &vars, batch, spec, mp)?;
    let j = objective_meanvar(r.weighted, r.weighted_sq, gamma);
    check_finite(&r, j)?;
    Ok((j.item(), tape.branch_pattern()))
}
