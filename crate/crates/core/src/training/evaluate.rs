use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contracts::ContractSpec;
use crate::error::{Error, Result};
use crate::market::{derive_seed, MarketParams, PathBatch};
use crate::policy::{rollout_path, stop_uniforms, PathOutcome, Policy};

use super::rollout::meanvar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Score the stopping weights `w_n` exactly.
    Relaxed,
    /// Draw a settlement day per path and score the realized PnL.
    Sampled,
}

impl std::str::FromStr for EvalMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relaxed" => Ok(Self::Relaxed),
            "sampled" => Ok(Self::Sampled),
            _ => Err(format!("unknown evaluation mode `{s}` (relaxed, sampled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub contract: String,
    pub mode: EvalMode,
    pub paths: usize,
    pub gamma: f64,
    pub mean: f64,
    pub variance: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J_normalized")]
    pub j_normalized: f64,
    /// `Q·S0` or `F`.
    pub normalizer: f64,
    /// Standard error of `mean`.
    pub mean_std_error: f64,
    /// Average settlement day under the relaxed weights (or sampled days).
    pub mean_settlement_day: f64,
}

/// Label mixed into the evaluation seed for the stopping uniforms.
const SAMPLING_LABEL: u64 = 0x5A4D_504C;

/// Per-path contributions `(Σ w PnL, Σ w PnL², Σ w n)` or their sampled
/// counterparts.
fn contributions(out: &PathOutcome, mode: EvalMode, uniforms: Option<&[f64]>) -> (f64, f64, f64) {
    match mode {
        EvalMode::Relaxed => {
            let day: f64 = out.weights.iter().enumerate().map(|(n, w)| w * n as f64).sum();
            (out.weighted_pnl(), out.weighted_pnl_sq(), day)
        }
        EvalMode::Sampled => {
            let n = out.sampled_stop(uniforms.expect("sampled mode draws uniforms"));
            let p = out.pnls[n];
            (p, p * p, n as f64)
        }
    }
}

/// Rolls `policy` over every path of `paths` in parallel, in path order.
pub fn path_outcomes(
    policy: &dyn Policy,
    spec: &ContractSpec,
    mp: &MarketParams,
    paths: &PathBatch,
) -> Result<Vec<PathOutcome>> {
    (0..paths.len())
        .into_par_iter()
        .map(|i| rollout_path(policy, paths.path(i), spec, mp))
        .collect()
}

/// Scores `policy` on `paths`. `seed` only matters in sampled mode.
pub fn evaluate(
    policy: &dyn Policy,
    spec: &ContractSpec,
    mp: &MarketParams,
    paths: &PathBatch,
    gamma: f64,
    mode: EvalMode,
    seed: u64,
) -> Result<EvalReport> {
    let outcomes = path_outcomes(policy, spec, mp, paths)?;
    report_from_outcomes(&outcomes, spec, mp, gamma, mode, seed)
}

pub fn report_from_outcomes(
    outcomes: &[PathOutcome],
    spec: &ContractSpec,
    mp: &MarketParams,
    gamma: f64,
    mode: EvalMode,
    seed: u64,
) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return Err(Error::Contract("evaluation needs at least one path".into()));
    }
    let useed = derive_seed(seed, SAMPLING_LABEL);
    let parts: Vec<(f64, f64, f64)> = outcomes
        .iter()
        .enumerate()
        .map(|(i, out)| {
            let u = match mode {
                EvalMode::Sampled => Some(stop_uniforms(useed, i, mp.days)),
                EvalMode::Relaxed => None,
            };
            contributions(out, mode, u.as_deref())
        })
        .collect();
    let count = parts.len() as f64;
    let m1 = parts.iter().map(|p| p.0).sum::<f64>() / count;
    let m2 = parts.iter().map(|p| p.1).sum::<f64>() / count;
    let day = parts.iter().map(|p| p.2).sum::<f64>() / count;
    let spread = if parts.len() > 1 {
        parts.iter().map(|p| (p.0 - m1).powi(2)).sum::<f64>() / (count - 1.0)
    } else {
        0.0
    };
    let j = meanvar(m1, m2, gamma);
    if !j.is_finite() {
        return Err(Error::Numerical("non-finite evaluation objective".into()));
    }
    let normalizer = spec.normalizer(mp.s0);
    Ok(EvalReport {
        contract: spec.kind().to_string(),
        mode,
        paths: parts.len(),
        gamma,
        mean: m1,
        variance: m2 - m1 * m1,
        j,
        j_normalized: j / normalizer,
        normalizer,
        mean_std_error: (spread / count).sqrt(),
        mean_settlement_day: day,
    })
}
