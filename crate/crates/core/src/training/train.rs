use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, ParamStore, DEFAULT_HIDDEN};
use crate::contracts::ContractSpec;
use crate::error::{Error, Result};
use crate::market::{derive_seed, simulate_paths, MarketParams, PathBatch};
use crate::policy::NetPolicy;

use super::evaluate::{evaluate, EvalMode, EvalReport};
use super::rollout::objective_gradient;

const INIT_LABEL: u64 = 0x1417;
const HELDOUT_LABEL: u64 = 0x04E1_D0D7;
const RESTART_LABEL: u64 = 0x07E5_7A27;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Risk aversion γ (€⁻¹).
    pub gamma: f64,
    /// Trajectories per gradient step.
    pub batch_size: usize,
    /// Total gradient steps.
    pub epochs: usize,
    /// Leading steps run with γ = 0.
    pub pretrain_epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Terminal-penalty coefficient used during pretraining instead of the
    /// contract's.
    pub pretrain_penalty_c: Option<f64>,
    pub hidden: usize,
    /// Initial frontier sharpness.
    pub nu_init: f64,
    /// Initial output bias of the stopping net (the exercise frontier).
    pub frontier_init: f64,
    /// Paths in the held-out evaluation batch; 0 disables it.
    pub heldout_size: usize,
    /// Held-out evaluation cadence in epochs (the last epoch is always
    /// evaluated).
    pub heldout_every: usize,
    /// Checkpoint cadence in epochs; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 2.5e-7,
            batch_size: 512,
            epochs: 1000,
            pretrain_epochs: 100,
            learning_rate: 1e-3,
            seed: 1,
            pretrain_penalty_c: None,
            hidden: DEFAULT_HIDDEN,
            nu_init: 10.0,
            frontier_init: 1.0,
            heldout_size: 1 << 14,
            heldout_every: 50,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::config(format!("training.{f}"), m));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma", "must be non-negative and finite");
        }
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2");
        }
        if self.pretrain_epochs > self.epochs {
            return bad("pretrain_epochs", "must not exceed epochs");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if let Some(c) = self.pretrain_penalty_c {
            if !(c >= 0.0 && c.is_finite()) {
                return bad("pretrain_penalty_c", "must be non-negative");
            }
        }
        if self.hidden == 0 {
            return bad("hidden", "must be at least 1");
        }
        if !(self.nu_init >= ParamStore::NU_MIN && self.nu_init.is_finite()) {
            return bad("nu_init", "must be positive");
        }
        if !self.frontier_init.is_finite() {
            return bad("frontier_init", "must be finite");
        }
        if self.heldout_size == 1 {
            return bad("heldout_size", "must be 0 or at least 2");
        }
        if self.heldout_every == 0 {
            return bad("heldout_every", "must be at least 1");
        }
        Ok(())
    }

    /// Initial parameters for `spec`, seeded from `self.seed`.
    pub fn initial_params(&self, spec: &ContractSpec) -> ParamStore {
        ParamStore::init(
            spec.kind(),
            self.hidden,
            self.nu_init,
            self.frontier_init,
            derive_seed(self.seed, INIT_LABEL),
        )
    }

    pub fn heldout_seed(&self) -> u64 {
        derive_seed(self.seed, HELDOUT_LABEL)
    }

    /// Seed of the `k`-th epoch's training batch.
    pub fn epoch_seed(&self, epoch: usize) -> u64 {
        derive_seed(self.seed, epoch as u64 + 1)
    }

    /// Seed used by restart `r`; restart 0 keeps the configured seed.
    pub fn restart_seed(&self, r: usize) -> u64 {
        if r == 0 {
            self.seed
        } else {
            derive_seed(self.seed, RESTART_LABEL + r as u64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Main,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Main => "main",
        }
    }
}

/// One learning-curve row. `objective` is the training-batch objective of
/// the phase being optimized, before the step's update; `heldout` is the
/// held-out objective under the full risk aversion after the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub phase: Phase,
    #[serde(rename = "J")]
    pub objective: f64,
    #[serde(rename = "J_normalized")]
    pub normalized: f64,
    #[serde(rename = "J_heldout")]
    pub heldout: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub curve: Vec<CurvePoint>,
    /// Final held-out report (relaxed), if a held-out batch is configured.
    pub heldout: Option<EvalReport>,
}

/// Training stopped early: the error plus the last parameters whose
/// objective was finite.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: Error,
    pub last_good: ParamStore,
    pub curve: Vec<CurvePoint>,
}

impl From<Error> for Box<TrainAbort> {
    fn from(error: Error) -> Self {
        Box::new(TrainAbort {
            error,
            last_good: ParamStore::naive(crate::contracts::ContractKind::FixedShares, 1),
            curve: Vec::new(),
        })
    }
}

/// Hooks called during training.
pub trait TrainObserver {
    fn on_epoch(&mut self, _point: &CurvePoint) {}
    fn on_checkpoint(&mut self, _epoch: usize, _params: &ParamStore) -> Result<()> {
        Ok(())
    }
}

pub struct Silent;
impl TrainObserver for Silent {}

/// Trains from the configured random initialization.
pub fn train(spec: &ContractSpec, mp: &MarketParams, tc: &TrainConfig) -> Result<TrainOutcome, Box<TrainAbort>> {
    train_from(tc.initial_params(spec), spec, mp, tc, &mut Silent)
}

pub fn heldout_batch(mp: &MarketParams, tc: &TrainConfig) -> Result<Option<PathBatch>> {
    if tc.heldout_size == 0 {
        return Ok(None);
    }
    simulate_paths(mp, tc.heldout_size, tc.heldout_seed()).map(Some)
}

pub fn train_from(
    init: ParamStore,
    spec: &ContractSpec,
    mp: &MarketParams,
    tc: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, Box<TrainAbort>> {
    let abort = |error: Error, last_good: &ParamStore, curve: &[CurvePoint]| {
        Box::new(TrainAbort {
            error,
            last_good: last_good.clone(),
            curve: curve.to_vec(),
        })
    };
    let setup = || -> Result<Option<PathBatch>> {
        mp.validate()?;
        spec.validate(mp.days)?;
        tc.validate()?;
        if init.kind != spec.kind() {
            return Err(Error::Mismatch(format!(
                "initial parameters are for {}, contract is {}",
                init.kind,
                spec.kind()
            )));
        }
        heldout_batch(mp, tc)
    };
    let heldout = setup().map_err(|e| abort(e, &init, &[]))?;

    let normalizer = spec.normalizer(mp.s0);
    let mut pretrain_spec = spec.clone();
    if let Some(c) = tc.pretrain_penalty_c {
        pretrain_spec.penalty_c = c;
    }

    let mut params = init;
    let mut adam = Adam::new(params.len(), tc.learning_rate);
    let mut curve = Vec::with_capacity(tc.epochs);
    let score = |p: &ParamStore, paths: &PathBatch| -> Result<EvalReport> {
        evaluate(&NetPolicy::new(p.clone()), spec, mp, paths, tc.gamma, EvalMode::Relaxed, 0)
    };

    for epoch in 0..tc.epochs {
        let phase = if epoch < tc.pretrain_epochs {
            Phase::Pretrain
        } else {
            Phase::Main
        };
        let (gamma, step_spec) = match phase {
            Phase::Pretrain => (0.0, &pretrain_spec),
            Phase::Main => (tc.gamma, spec),
        };
        let step = (|| -> Result<(f64, ParamStore)> {
            let batch = simulate_paths(mp, tc.batch_size, tc.epoch_seed(epoch))?;
            let og = objective_gradient(&batch, &params, step_spec, mp, gamma)?;
            let mut flat = params.flatten();
            adam.step(&mut flat, &og.gradient)?;
            let mut next = params.clone();
            next.assign_flat(&flat)?;
            Ok((og.result.objective, next))
        })();
        let (objective, next) = step.map_err(|e| abort(e, &params, &curve))?;
        params = next;

        let last = epoch + 1 == tc.epochs;
        let heldout_j = match &heldout {
            Some(paths) if last || (epoch + 1) % tc.heldout_every == 0 => {
                Some(score(&params, paths).map_err(|e| abort(e, &params, &curve))?.j)
            }
            _ => None,
        };
        let point = CurvePoint {
            epoch,
            phase,
            objective,
            normalized: objective / normalizer,
            heldout: heldout_j,
        };
        curve.push(point);
        observer.on_epoch(&point);
        if tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 {
            observer
                .on_checkpoint(epoch + 1, &params)
                .map_err(|e| abort(e, &params, &curve))?;
        }
    }

    let report = match &heldout {
        Some(paths) => Some(score(&params, paths).map_err(|e| abort(e, &params, &curve))?),
        None => None,
    };
    Ok(TrainOutcome {
        params,
        curve,
        heldout: report,
    })
}

/// Best of `restarts` independent trainings by final held-out objective.
/// Returns the winning restart index with its outcome.
pub fn train_best_of(
    spec: &ContractSpec,
    mp: &MarketParams,
    tc: &TrainConfig,
    restarts: usize,
    observer: &mut dyn TrainObserver,
) -> Result<(usize, TrainOutcome), Box<TrainAbort>> {
    if restarts == 0 {
        return Err(Error::config("sweep.restarts", "must be at least 1").into());
    }
    if tc.heldout_size == 0 && restarts > 1 {
        return Err(Error::config("training.heldout_size", "restarts are ranked on the held-out batch").into());
    }
    let mut best: Option<(usize, TrainOutcome)> = None;
    for r in 0..restarts {
        let rc = TrainConfig {
            seed: tc.restart_seed(r),
            ..tc.clone()
        };
        let out = train_from(rc.initial_params(spec), spec, mp, &rc, observer)?;
        let j = out.heldout.as_ref().map_or(f64::NEG_INFINITY, |h| h.j);
        let better = match &best {
            None => true,
            Some((_, b)) => j > b.heldout.as_ref().map_or(f64::NEG_INFINITY, |h| h.j),
        };
        if better {
            best = Some((r, out));
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::ContractKind;

    fn small() -> (ContractSpec, MarketParams, TrainConfig) {
        let mp = MarketParams::reference().with_days(8);
        let spec = ContractSpec {
            exercise_window: Some((3, 7)),
            ..ContractSpec::reference_fixed_shares()
        };
        let tc = TrainConfig {
            batch_size: 16,
            epochs: 6,
            pretrain_epochs: 2,
            hidden: 6,
            heldout_size: 32,
            heldout_every: 3,
            ..TrainConfig::default()
        };
        (spec, mp, tc)
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (spec, mp, mut tc) = small();
        tc.epochs = 0;
        tc.pretrain_epochs = 0;
        let out = train(&spec, &mp, &tc).unwrap();
        assert_eq!(out.params, tc.initial_params(&spec));
        assert!(out.curve.is_empty());
        assert!(out.heldout.is_some());
    }

    #[test]
    fn curve_phases_and_heldout_cadence() {
        let (spec, mp, tc) = small();
        let out = train(&spec, &mp, &tc).unwrap();
        let phases: Vec<Phase> = out.curve.iter().map(|p| p.phase).collect();
        assert_eq!(phases[..2], [Phase::Pretrain; 2]);
        assert!(phases[2..].iter().all(|p| *p == Phase::Main));
        let held: Vec<bool> = out.curve.iter().map(|p| p.heldout.is_some()).collect();
        assert_eq!(held, vec![false, false, true, false, false, true]);
        assert_eq!(out.curve[5].heldout.unwrap(), out.heldout.unwrap().j);
    }

    #[test]
    fn training_is_deterministic() {
        let (spec, mp, tc) = small();
        let a = train(&spec, &mp, &tc).unwrap();
        let b = train(&spec, &mp, &tc).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn invalid_config_is_reported_before_training() {
        let (spec, mp, mut tc) = small();
        tc.pretrain_epochs = 10;
        let err = train(&spec, &mp, &tc).unwrap_err();
        assert_eq!(err.error.exit_code(), 2);
        assert!(err.error.to_string().contains("training.pretrain_epochs"));
    }

    #[test]
    fn mismatched_initial_params_are_rejected() {
        let (spec, mp, tc) = small();
        let init = ParamStore::naive(ContractKind::ProfitSharing, 4);
        let err = train_from(init, &spec, &mp, &tc, &mut Silent).unwrap_err();
        assert_eq!(err.error.exit_code(), 3);
    }

    #[test]
    fn non_finite_objective_aborts_with_last_good_params() {
        let (spec, mp, tc) = small();
        let mut init = tc.initial_params(&spec);
        init.trade.b2.set(0, 0, f64::NAN);
        let err = train_from(init.clone(), &spec, &mp, &tc, &mut Silent).unwrap_err();
        assert_eq!(err.error.exit_code(), 4);
        assert!(err.curve.is_empty());
    }

    #[test]
    fn single_restart_equals_plain_training() {
        let (spec, mp, tc) = small();
        let plain = train(&spec, &mp, &tc).unwrap();
        let (r, best) = train_best_of(&spec, &mp, &tc, 1, &mut Silent).unwrap();
        assert_eq!(r, 0);
        assert_eq!(best.params, plain.params);
    }

    #[test]
    fn training_improves_a_short_problem() {
        let (spec, mp, mut tc) = small();
        tc.epochs = 150;
        tc.pretrain_epochs = 0;
        tc.learning_rate = 5e-3;
        tc.heldout_every = 150;
        let out = train(&spec, &mp, &tc).unwrap();
        let first = TrainConfig { epochs: 0, pretrain_epochs: 0, ..tc.clone() };
        let before = train(&spec, &mp, &first).unwrap().heldout.unwrap().j;
        let after = out.heldout.unwrap().j;
        assert!(after > before, "{before} -> {after}");
    }
}
