//! Parameter update rules: Adam and plain SGD.

use super::{Tensor, TensorError};
use serde::{Deserialize, Serialize};

/// Which update rule an [`OptimizerState`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Optimizer with per-parameter state.
///
/// Adam keeps first/second moment estimates per parameter element and applies
/// the bias-corrected update
/// `p -= lr · m̂ / (√v̂ + ε)` with `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
/// SGD applies `p -= lr · g`.
///
/// Every step validates the gradients: a NaN or infinite component aborts the
/// step with [`TensorError::NonFiniteGradient`] before any parameter is
/// touched. An all-zero gradient leaves parameters exactly unchanged from a
/// fresh state.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f32,
    beta1: f32,
    beta2: f32,
    epsilon: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl OptimizerState {
    /// Adam with the standard moment decays (0.9, 0.999) and ε = 1e-8.
    pub fn adam(learning_rate: f32) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Plain stochastic gradient descent.
    pub fn sgd(learning_rate: f32) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(learning_rate)
        }
    }

    pub fn new(kind: OptimizerKind, learning_rate: f32) -> Self {
        match kind {
            OptimizerKind::Adam => Self::adam(learning_rate),
            OptimizerKind::Sgd => Self::sgd(learning_rate),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f32 {
        self.learning_rate
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update over all parameters.
    ///
    /// `grads[i]` must have exactly as many elements as `params[i]`. The
    /// parameter list must be identical (same order, same shapes) on every
    /// call for a given state.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f32]]) -> Result<(), TensorError> {
        if params.len() != grads.len() {
            return Err(TensorError::ParamCount {
                params: params.len(),
                got: grads.len(),
            });
        }
        let t = self.step + 1;
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.numel() != g.len() {
                return Err(TensorError::GradLength {
                    index: i,
                    expected: p.numel(),
                    got: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFiniteGradient { index: i, step: t });
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, &gv) in p.data_mut().iter_mut().zip(*g) {
                        *pv -= self.learning_rate * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
                    self.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
                }
                if self.m.len() != params.len() {
                    return Err(TensorError::ParamCount {
                        params: self.m.len(),
                        got: params.len(),
                    });
                }
                let bc1 = 1.0 - (self.beta1 as f64).powi(t as i32);
                let bc2 = 1.0 - (self.beta2 as f64).powi(t as i32);
                let (b1, b2) = (self.beta1, self.beta2);
                let (bc1, bc2) = (bc1 as f32, bc2 as f32);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    for (((pv, &gv), mv), vv) in
                        p.data_mut().iter_mut().zip(*g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mv = b1 * *mv + (1.0 - b1) * gv;
                        *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
                    }
                }
            }
        }
        self.step = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.data().to_vec();
        let mut opt = OptimizerState::adam(1e-3);
        opt.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p.data(), &before[..]);
    }

    #[test]
    fn first_adam_step_moves_by_about_learning_rate() {
        // After one step m̂ = g and v̂ = g², so the update is
        // lr·g/(|g| + ε) ≈ lr·sign(g) for any reasonably sized gradient.
        let mut p = Tensor::from_vec(vec![2], vec![1.0, 1.0]).unwrap();
        let mut opt = OptimizerState::adam(1e-3);
        opt.step(&mut [&mut p], &[&[0.5, -3.0]]).unwrap();
        let d0 = 1.0 - p.data()[0];
        let d1 = 1.0 - p.data()[1];
        assert!((d0 - 1e-3).abs() < 1e-6, "step was {d0}");
        assert!((d1 + 1e-3).abs() < 1e-6, "step was {d1}");
    }

    #[test]
    fn nan_gradient_aborts_without_touching_parameters() {
        let mut p = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let mut opt = OptimizerState::adam(1e-3);
        let err = opt.step(&mut [&mut p], &[&[0.1, f32::NAN]]).unwrap_err();
        assert!(
            matches!(err, TensorError::NonFiniteGradient { index: 0, step: 1 }),
            "{err}"
        );
        assert_eq!(p.data(), &[1.0, 2.0]);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn sgd_applies_plain_update() {
        let mut p = Tensor::from_vec(vec![2], vec![1.0, -1.0]).unwrap();
        let mut opt = OptimizerState::sgd(0.1);
        opt.step(&mut [&mut p], &[&[2.0, -4.0]]).unwrap();
        assert_eq!(p.data(), &[0.8, -0.6]);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        // f(x) = (x - 2)², ∇f = 2(x - 2), from x = -3.
        let mut x = Tensor::from_vec(vec![1], vec![-3.0]).unwrap();
        let mut opt = OptimizerState::adam(1e-2);
        for _ in 0..2000 {
            let g = 2.0 * (x.data()[0] - 2.0);
            opt.step(&mut [&mut x], &[&[g]]).unwrap();
        }
        assert!(
            (x.data()[0] - 2.0).abs() < 1e-2,
            "converged to {}",
            x.data()[0]
        );
    }

    #[test]
    fn mismatched_gradient_length_is_rejected() {
        let mut p = Tensor::from_vec(vec![3], vec![0.0; 3]).unwrap();
        let mut opt = OptimizerState::adam(1e-3);
        let err = opt.step(&mut [&mut p], &[&[0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, TensorError::GradLength { index: 0, expected: 3, got: 2 }), "{err}");
    }
}
