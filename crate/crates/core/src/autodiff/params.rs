use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::array::Array;
use super::tape::{Gradients, Tape, Var};
use super::AutodiffError;
use crate::contracts::ContractKind;

pub const DEFAULT_HIDDEN: usize = 50;

/// Output bias of the naive stopping net: the exercise frontier sits far
/// above any reachable ratio, so the stopping probability is 0 everywhere
/// inside the exercise window.
const NAIVE_FRONTIER: f64 = 1.0e6;

/// One-hidden-layer perceptron `w2 · relu(w1 · x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `hidden × d_in`
    pub w1: Array,
    /// `hidden × 1`
    pub b1: Array,
    /// `1 × hidden`
    pub w2: Array,
    /// `1 × 1`
    pub b2: Array,
}

impl Mlp {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w1: Array::zeros(hidden, input_dim),
            b1: Array::zeros(hidden, 1),
            w2: Array::zeros(1, hidden),
            b2: Array::zeros(1, 1),
        }
    }

    /// He-uniform first layer, zero biases, small uniform read-out.
    pub fn init(input_dim: usize, hidden: usize, output_bias: f64, rng: &mut impl Rng) -> Self {
        let a1 = (6.0 / input_dim as f64).sqrt();
        let a2 = 0.1 / (hidden as f64).sqrt();
        Self {
            w1: Array::from_fn(hidden, input_dim, |_, _| rng.random_range(-a1..a1)),
            b1: Array::zeros(hidden, 1),
            w2: Array::from_fn(1, hidden, |_, _| rng.random_range(-a2..a2)),
            b2: Array::scalar(output_bias),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Straight-line evaluation on one input vector.
    pub fn eval(&self, x: &[f64]) -> Result<f64, AutodiffError> {
        let d = self.input_dim();
        if x.len() != d {
            return Err(AutodiffError::InputShape {
                expected: d,
                got: x.len(),
            });
        }
        let w1 = self.w1.as_slice();
        let mut out = 0.0;
        for j in 0..self.hidden() {
            let mut pre = 0.0;
            for (k, &xk) in x.iter().enumerate() {
                pre += w1[j * d + k] * xk;
            }
            pre += self.b1.as_slice()[j];
            if pre > 0.0 {
                out += self.w2.as_slice()[j] * pre;
            }
        }
        Ok(out + self.b2.item())
    }

    pub fn record<'t>(&self, tape: &'t Tape) -> MlpVars<'t> {
        MlpVars {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
        }
    }

    fn flat_parts(&self) -> [&Array; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn flat_parts_mut(&mut self) -> [&mut Array; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// An [`Mlp`] recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct MlpVars<'t> {
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
}

impl<'t> MlpVars<'t> {
    /// Batched forward pass: `x` is `d_in × I`, the result `1 × I`.
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        let expected = self.w1.shape().1;
        let got = x.shape().0;
        if expected != got {
            return Err(AutodiffError::InputShape { expected, got });
        }
        let hidden = (self.w1.matmul(x) + self.b1).relu();
        Ok(self.w2.matmul(hidden) + self.b2)
    }

    fn parts(&self) -> [Var<'t>; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// Single-vector forward pass recorded on `tape`; returns a `1 × 1` node.
pub fn mlp_forward<'t>(net: &MlpVars<'t>, x: &[f64]) -> Result<Var<'t>, AutodiffError> {
    let input = net.w1.tape().constant(Array::column(x));
    net.forward(input)
}

/// Every trainable scalar of one contract's policy: the trading net, the
/// stopping-frontier net and the frontier sharpness `nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub kind: ContractKind,
    pub trade: Mlp,
    pub stop: Mlp,
    pub nu: f64,
}

impl ParamStore {
    /// Smallest admissible `nu`; the optimizer projects onto `[NU_MIN, ∞)`.
    pub const NU_MIN: f64 = 1e-6;

    /// Random initialization.
    ///
    /// `frontier` is the initial output of the stopping net: the ratio
    /// (`q/Q`, `qA/F` or `X/F`) above which exercise becomes likely.
    pub fn init(kind: ContractKind, hidden: usize, nu: f64, frontier: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trade = Mlp::init(kind.trade_inputs(), hidden, 0.0, &mut rng);
        let stop = Mlp::init(kind.stop_inputs(), hidden, frontier, &mut rng);
        Self {
            kind,
            trade,
            stop,
            nu,
        }
    }

    /// Parameters of the naive policy: zero trading perturbation and a
    /// stopping frontier that is never crossed.
    pub fn naive(kind: ContractKind, hidden: usize) -> Self {
        let mut stop = Mlp::zeros(kind.stop_inputs(), hidden);
        stop.b2 = Array::scalar(NAIVE_FRONTIER);
        Self {
            kind,
            trade: Mlp::zeros(kind.trade_inputs(), hidden),
            stop,
            nu: 10.0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.trade.hidden()
    }

    pub fn len(&self) -> usize {
        self.trade.param_count() + self.stop.param_count() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Named tensors in canonical order.
    pub fn named_tensors(&self) -> Vec<(&'static str, Array)> {
        let [a, b, c, d] = self.trade.flat_parts();
        let [e, f, g, h] = self.stop.flat_parts();
        vec![
            ("trade.w1", a.clone()),
            ("trade.b1", b.clone()),
            ("trade.w2", c.clone()),
            ("trade.b2", d.clone()),
            ("stop.w1", e.clone()),
            ("stop.b1", f.clone()),
            ("stop.w2", g.clone()),
            ("stop.b2", h.clone()),
            ("nu", Array::scalar(self.nu)),
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for part in self.trade.flat_parts().into_iter().chain(self.stop.flat_parts()) {
            out.extend_from_slice(part.as_slice());
        }
        out.push(self.nu);
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<(), AutodiffError> {
        if flat.len() != self.len() {
            return Err(AutodiffError::LengthMismatch {
                params: self.len(),
                grads: flat.len(),
            });
        }
        let mut offset = 0;
        let [a, b, c, d] = self.trade.flat_parts_mut();
        let [e, f, g, h] = self.stop.flat_parts_mut();
        for part in [a, b, c, d, e, f, g, h] {
            let n = part.len();
            part.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        self.nu = flat[offset].max(Self::NU_MIN);
        Ok(())
    }

    pub fn record<'t>(&self, tape: &'t Tape) -> ParamVars<'t> {
        ParamVars {
            trade: self.trade.record(tape),
            stop: self.stop.record(tape),
            nu: tape.leaf(Array::scalar(self.nu)),
        }
    }
}

/// A [`ParamStore`] recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars<'t> {
    pub trade: MlpVars<'t>,
    pub stop: MlpVars<'t>,
    pub nu: Var<'t>,
}

impl ParamVars<'_> {
    /// Gradient flattened in [`ParamStore::flatten`] order.
    pub fn flat_gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for v in self.trade.parts().into_iter().chain(self.stop.parts()) {
            out.extend_from_slice(grads.wrt_or_zeros(v).as_slice());
        }
        out.push(grads.wrt_or_zeros(self.nu).item());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(3, 7);
        assert_eq!(net.eval(&[1.0, -5.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn identity_layer_sums_positive_parts() {
        let mut net = Mlp::zeros(3, 3);
        for i in 0..3 {
            net.w1.set(i, i, 1.0);
            net.w2.set(0, i, 1.0);
        }
        assert_eq!(net.eval(&[1.0, -2.0, 3.0]).unwrap(), 4.0);

        let tape = Tape::new();
        let vars = net.record(&tape);
        assert_eq!(mlp_forward(&vars, &[1.0, -2.0, 3.0]).unwrap().item(), 4.0);
    }

    #[test]
    fn wrong_input_dim_is_an_error() {
        let net = Mlp::zeros(4, 5);
        assert_eq!(
            net.eval(&[1.0, 2.0]),
            Err(AutodiffError::InputShape {
                expected: 4,
                got: 2
            })
        );
        let tape = Tape::new();
        let vars = net.record(&tape);
        assert!(mlp_forward(&vars, &[1.0]).is_err());
    }

    #[test]
    fn shapes_follow_contract_kind() {
        for (kind, dv, dp) in [
            (ContractKind::FixedShares, 4, 3),
            (ContractKind::FixedNotional, 4, 3),
            (ContractKind::ProfitSharing, 5, 4),
        ] {
            let p = ParamStore::init(kind, DEFAULT_HIDDEN, 10.0, 1.0, 7);
            assert_eq!(p.trade.input_dim(), dv);
            assert_eq!(p.stop.input_dim(), dp);
            assert_eq!(p.hidden(), 50);
            assert!(p.nu > 0.0);
            assert_eq!(p.flatten().len(), p.len());
        }
    }

    #[test]
    fn flatten_assign_roundtrip() {
        let p = ParamStore::init(ContractKind::ProfitSharing, 6, 3.0, 0.5, 1);
        let mut q = ParamStore::naive(ContractKind::ProfitSharing, 6);
        q.assign_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(q.assign_flat(&[1.0]).is_err());
    }

    #[test]
    fn assign_projects_nu() {
        let mut p = ParamStore::naive(ContractKind::FixedShares, 2);
        let mut flat = p.flatten();
        *flat.last_mut().unwrap() = -3.0;
        p.assign_flat(&flat).unwrap();
        assert_eq!(p.nu, ParamStore::NU_MIN);
    }
}
