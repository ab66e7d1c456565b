//! Contract termsheets and the PnL realized when settling on a given day.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::market::{terminal_penalty, MarketState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContractKind {
    FixedShares,
    FixedNotional,
    ProfitSharing,
}

impl ContractKind {
    pub const ALL: [ContractKind; 3] = [
        ContractKind::FixedShares,
        ContractKind::FixedNotional,
        ContractKind::ProfitSharing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContractKind::FixedShares => "fixed-shares",
            ContractKind::FixedNotional => "fixed-notional",
            ContractKind::ProfitSharing => "profit-sharing",
        }
    }

    /// Trading-net input width.
    pub fn trade_inputs(self) -> usize {
        match self {
            ContractKind::ProfitSharing => 5,
            _ => 4,
        }
    }

    /// Stopping-net input width.
    pub fn stop_inputs(self) -> usize {
        match self {
            ContractKind::ProfitSharing => 4,
            _ => 3,
        }
    }
}

impl fmt::Display for ContractKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContractKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ContractKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                format!("unknown contract kind `{s}` (fixed-shares, fixed-notional, profit-sharing)")
            })
    }
}

/// Size and option terms of each contract type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContractTerms {
    FixedShares {
        /// Shares to deliver.
        shares: f64,
    },
    FixedNotional {
        /// Cash paid by the firm (€).
        notional: f64,
        /// Fraction of `F/S0` shares delivered upfront; nets out of the PnL.
        zeta: f64,
    },
    ProfitSharing {
        /// Cash to spend (€).
        notional: f64,
        /// Bank's share of the upside.
        alpha: f64,
        /// Hurdle as a fraction of `S0`.
        kappa: f64,
        /// Bank's share of the downside, `0 ≤ β < α`.
        beta: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractSpec {
    pub terms: ContractTerms,
    /// Inclusive early-exercise window `[first, last]`, `None` for no early
    /// exercise. Expiry is always a settlement day.
    pub exercise_window: Option<(usize, usize)>,
    /// Participation bounds as fractions of market volume.
    pub rho_min: f64,
    pub rho_max: f64,
    /// Coefficient `C` of the terminal penalty `C x²`.
    pub penalty_c: f64,
}

impl ContractSpec {
    /// Fixed-shares ASR: Q = 2·10⁷, window [22, 62], C = 2·10⁻⁷.
    pub fn reference_fixed_shares() -> Self {
        Self {
            terms: ContractTerms::FixedShares { shares: 2.0e7 },
            exercise_window: Some((22, 62)),
            rho_min: f64::NEG_INFINITY,
            rho_max: f64::INFINITY,
            penalty_c: 2.0e-7,
        }
    }

    /// Fixed-notional ASR: F = 9·10⁸ €, ζ = 0.8.
    pub fn reference_fixed_notional() -> Self {
        Self {
            terms: ContractTerms::FixedNotional {
                notional: 9.0e8,
                zeta: 0.8,
            },
            ..Self::reference_fixed_shares()
        }
    }

    /// Profit-sharing: F = 9·10⁸ €, α = 0.25, κ = 0.005, β = 0.05,
    /// C = 2·10⁻⁹, no selling.
    pub fn reference_profit_sharing() -> Self {
        Self {
            terms: ContractTerms::ProfitSharing {
                notional: 9.0e8,
                alpha: 0.25,
                kappa: 0.005,
                beta: 0.05,
            },
            exercise_window: Some((22, 62)),
            rho_min: 0.0,
            rho_max: f64::INFINITY,
            penalty_c: 2.0e-9,
        }
    }

    pub fn reference(kind: ContractKind) -> Self {
        match kind {
            ContractKind::FixedShares => Self::reference_fixed_shares(),
            ContractKind::FixedNotional => Self::reference_fixed_notional(),
            ContractKind::ProfitSharing => Self::reference_profit_sharing(),
        }
    }

    pub fn kind(&self) -> ContractKind {
        match self.terms {
            ContractTerms::FixedShares { .. } => ContractKind::FixedShares,
            ContractTerms::FixedNotional { .. } => ContractKind::FixedNotional,
            ContractTerms::ProfitSharing { .. } => ContractKind::ProfitSharing,
        }
    }

    /// `Q` for fixed shares, `F` otherwise.
    pub fn size(&self) -> f64 {
        match self.terms {
            ContractTerms::FixedShares { shares } => shares,
            ContractTerms::FixedNotional { notional, .. } | ContractTerms::ProfitSharing { notional, .. } => {
                notional
            }
        }
    }

    /// Denominator of normalized scores: `Q·S0` or `F`.
    pub fn normalizer(&self, s0: f64) -> f64 {
        match self.terms {
            ContractTerms::FixedShares { shares } => shares * s0,
            _ => self.size(),
        }
    }

    /// Day `n` is inside the early-exercise window.
    pub fn in_window(&self, n: usize) -> bool {
        matches!(self.exercise_window, Some((a, b)) if a <= n && n <= b)
    }

    /// Settlement may happen on day `n` (window or expiry).
    pub fn exercise_allowed(&self, n: usize, days: usize) -> bool {
        n == days || self.in_window(n)
    }

    /// Participation-bound clamp of a daily rate given that day's volume.
    pub fn clamp_rate(&self, v: f64, volume: f64) -> f64 {
        let mut v = v;
        if self.rho_max.is_finite() {
            v = v.min(self.rho_max * volume);
        }
        if self.rho_min.is_finite() {
            v = v.max(self.rho_min * volume);
        }
        v
    }

    pub fn validate(&self, days: usize) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("contract.{field}"), msg));
        let pos = |x: f64| x > 0.0 && x.is_finite();
        match self.terms {
            ContractTerms::FixedShares { shares } => {
                if !pos(shares) {
                    return bad("shares", "must be positive");
                }
            }
            ContractTerms::FixedNotional { notional, zeta } => {
                if !pos(notional) {
                    return bad("notional", "must be positive");
                }
                if !(0.0..=1.0).contains(&zeta) {
                    return bad("zeta", "must lie in [0, 1]");
                }
            }
            ContractTerms::ProfitSharing {
                notional,
                alpha,
                kappa,
                beta,
            } => {
                if !pos(notional) {
                    return bad("notional", "must be positive");
                }
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return bad("alpha", "must lie in (0, 1]");
                }
                if !(0.0..alpha).contains(&beta) {
                    return bad("beta", "must satisfy 0 <= beta < alpha");
                }
                if !kappa.is_finite() {
                    return bad("kappa", "must be finite");
                }
            }
        }
        if let Some((a, b)) = self.exercise_window {
            if a < 1 || b >= days || a > b {
                return bad(
                    "exercise_set",
                    &format!("window [{a}, {b}] must satisfy 1 <= first <= last <= {}", days - 1),
                );
            }
        }
        if self.rho_min.is_nan() || self.rho_max.is_nan() || self.rho_min > self.rho_max {
            return bad("rho_min", "participation bounds must satisfy rho_min <= rho_max");
        }
        if self.rho_min > 0.0 && self.rho_min.is_infinite() || self.rho_max < 0.0 && self.rho_max.is_infinite() {
            return bad("rho_max", "bounds must admit a finite rate");
        }
        if !(self.penalty_c >= 0.0 && self.penalty_c.is_finite()) {
            return bad("penalty_c", "must be non-negative");
        }
        Ok(())
    }

    /// PnL realized by settling in state `st`.
    pub fn pnl(&self, st: &MarketState, s0: f64) -> Result<f64> {
        match self.terms {
            ContractTerms::FixedShares { shares } => Ok(pnl_fixed_shares(st, shares, self.penalty_c)),
            ContractTerms::FixedNotional { notional, .. } => pnl_fixed_notional(st, notional, self.penalty_c),
            ContractTerms::ProfitSharing {
                notional,
                alpha,
                kappa,
                beta,
            } => Ok(pnl_profit_sharing(
                st,
                s0,
                notional,
                alpha,
                kappa,
                beta,
                self.penalty_c,
            )),
        }
    }
}

/// `Q A − X − (Q − q) S − C (Q − q)²`.
pub fn pnl_fixed_shares(st: &MarketState, shares: f64, c: f64) -> f64 {
    let rest = shares - st.q;
    shares * st.a - st.x - rest * st.s - terminal_penalty(rest, c)
}

/// `F − X − (F/A − q) S − C (F/A − q)²`; requires `A > 0`.
pub fn pnl_fixed_notional(st: &MarketState, notional: f64, c: f64) -> Result<f64> {
    if !(st.a > 0.0) {
        return Err(Error::Numerical(format!(
            "fixed-notional settlement needs a positive average price, got A = {} on day {}",
            st.a, st.n
        )));
    }
    let rest = notional / st.a - st.q;
    Ok(notional - st.x - rest * st.s - terminal_penalty(rest, c))
}

/// `−C (F − X)² + α (q(A − κS0) − F)₊ − β (q(A − κS0) − F)₋`.
pub fn pnl_profit_sharing(
    st: &MarketState,
    s0: f64,
    notional: f64,
    alpha: f64,
    kappa: f64,
    beta: f64,
    c: f64,
) -> f64 {
    let gain = st.q * (st.a - kappa * s0) - notional;
    -terminal_penalty(notional - st.x, c) + alpha * gain.max(0.0) - beta * (-gain).max(0.0)
}
