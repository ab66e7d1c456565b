use super::AutodiffError;

/// Adaptive-moment optimizer, applied as gradient *ascent*.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// `params += lr · m̂ / (√v̂ + ε)`.
    ///
    /// A non-finite gradient leaves both the parameters and the moments
    /// untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), AutodiffError> {
        if params.len() != grads.len() || grads.len() != self.m.len() {
            return Err(AutodiffError::LengthMismatch {
                params: params.len(),
                grads: grads.len(),
            });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(AutodiffError::NonFiniteGradient { index });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] += self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
