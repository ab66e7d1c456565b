//! Reverse-mode gradients of the full rollout objective against central
//! finite differences on a three-day toy market.

use rand::Rng;
use serde::Serialize;

use crate::autodiff::ParamStore;
use crate::contracts::{ContractKind, ContractSpec, ContractTerms};
use crate::error::Result;
use crate::market::{path_rng, simulate_paths, MarketParams};

use super::rollout::{objective_gradient, objective_with_branches};

/// Relative step of the finite differences.
pub const FD_STEP: f64 = 1e-3;
/// Components whose gradient is below this fraction of the largest one are
/// compared against that floor instead of their own size.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub contract: String,
    pub parameters: usize,
    pub checked: usize,
    /// Parameters whose perturbation moved some kink to the other branch.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Toy problem for `seed`: three days, small sizes, contract kind cycling
/// with the seed, finite participation bounds on odd seeds.
pub fn toy_instance(seed: u64) -> (ContractSpec, MarketParams, f64) {
    let mp = MarketParams {
        s0: 10.0,
        sigma: 0.5,
        days: 3,
        dt: 1.0,
        volume: vec![100.0, 120.0, 90.0],
        eta: 0.1,
        cost_exponent: 0.75,
        ..MarketParams::reference()
    };
    let kind = ContractKind::ALL[(seed % 3) as usize];
    let terms = match kind {
        ContractKind::FixedShares => ContractTerms::FixedShares { shares: 150.0 },
        ContractKind::FixedNotional => ContractTerms::FixedNotional {
            notional: 1500.0,
            zeta: 0.8,
        },
        ContractKind::ProfitSharing => ContractTerms::ProfitSharing {
            notional: 1500.0,
            alpha: 0.25,
            kappa: 0.005,
            beta: 0.05,
        },
    };
    let mut spec = ContractSpec {
        terms,
        exercise_window: Some((1, 2)),
        penalty_c: 1e-2,
        ..ContractSpec::reference(kind)
    };
    if seed % 2 == 1 {
        spec.rho_max = 0.8;
        if kind != ContractKind::ProfitSharing {
            spec.rho_min = -0.2;
        }
    }
    (spec, mp, 1e-3)
}

/// Compares every parameter's gradient with a Richardson-extrapolated
/// central difference, skipping parameters whose stencil crosses a kink.
pub fn grad_check(seed: u64) -> Result<GradCheckReport> {
    grad_check_with_step(seed, FD_STEP)
}

pub fn grad_check_with_step(seed: u64, step: f64) -> Result<GradCheckReport> {
    let (spec, mp, gamma) = toy_instance(seed);
    let mut rng = path_rng(seed, u64::MAX);
    let nu = rng.random_range(1.0..5.0);
    let frontier = rng.random_range(0.3..1.2);
    let mut params = ParamStore::init(spec.kind(), 5, nu, frontier, seed);
    // Move off the initialization's special values (zero biases).
    let mut flat = params.flatten();
    for x in flat.iter_mut() {
        *x += rng.random_range(-0.1..0.1);
    }
    params.assign_flat(&flat)?;

    let batch = simulate_paths(&mp, 16, seed)?;
    let exact = objective_gradient(&batch, &params, &spec, &mp, gamma)?;
    let scale = exact.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let base = params.flatten();

    let eval = |k: usize, h: f64| -> Result<(f64, Vec<u8>)> {
        let mut p = params.clone();
        let mut x = base.clone();
        x[k] += h;
        p.assign_flat(&x)?;
        objective_with_branches(&batch, &p, &spec, &mp, gamma)
    };

    let mut checked = 0;
    let mut skipped = 0;
    let mut worst = (0.0f64, 0usize);
    for (k, &g) in exact.gradient.iter().enumerate() {
        let h = step * base[k].abs().max(1.0);
        let mut values = [0.0; 4];
        let mut smooth = true;
        for (slot, step) in [h, -h, 0.5 * h, -0.5 * h].into_iter().enumerate() {
            let (j, pattern) = eval(k, step)?;
            smooth &= pattern == exact.branches;
            values[slot] = j;
        }
        if !smooth {
            skipped += 1;
            continue;
        }
        let wide = (values[0] - values[1]) / (2.0 * h);
        let narrow = (values[2] - values[3]) / h;
        let fd = (4.0 * narrow - wide) / 3.0;
        let denom = g.abs().max(fd.abs()).max(GRAD_FLOOR * scale);
        let err = if denom == 0.0 { 0.0 } else { (g - fd).abs() / denom };
        checked += 1;
        if err > worst.0 {
            worst = (err, k);
        }
    }
    Ok(GradCheckReport {
        seed,
        contract: spec.kind().to_string(),
        parameters: base.len(),
        checked,
        skipped,
        max_rel_error: worst.0,
        worst_index: worst.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_match_finite_differences_for_each_contract() {
        for seed in 0..6 {
            let r = grad_check(seed).unwrap();
            assert!(r.checked > r.parameters / 2, "{r:?}");
            assert!(r.max_rel_error < 1e-5, "{r:?}");
        }
    }
}
