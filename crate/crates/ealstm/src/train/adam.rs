//! Adaptive-moment optimizer with bias correction, the stochastic gradient
//! descent variant used by the training loop.

use crate::cell::CellParameters;
use crate::train::backward::GradientSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators, one flat buffer per parameter array,
/// aligned with the canonical array order.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(params: &CellParameters) -> Self {
        let shapes: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
        Adam {
            m: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update with the given learning rate. Gradient arrays must come
    /// from the same architecture as `params`.
    pub fn step(&mut self, params: &mut CellParameters, grads: &GradientSet, lr: f64) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - BETA1.powf(t);
        let bc2 = 1.0 - BETA2.powf(t);
        let g_slices = grads.param_slices();
        let p_slices = params.param_slices_mut();
        debug_assert_eq!(g_slices.len(), p_slices.len());
        for (((p, g), m), v) in p_slices
            .into_iter()
            .zip(g_slices)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for k in 0..p.len() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{init_parameters, ArchDims, CellVariant};
    use approx::assert_abs_diff_eq;

    #[test]
    fn first_step_matches_hand_update() {
        let dims = ArchDims {
            variant: CellVariant::Lstm,
            hidden_size: 2,
            dynamic_dim: 1,
            static_dim: 0,
        };
        let mut params = init_parameters(dims, 1).unwrap();
        let before = params.w_i[[0, 0]];
        let mut grads = GradientSet::zeros(&params, 1);
        grads.w_i[[0, 0]] = 0.5;
        let mut opt = Adam::new(&params);
        opt.step(&mut params, &grads, 1e-3);
        // With bias correction the first step is lr * g / (|g| + eps).
        let expected = before - 1e-3 * 0.5 / (0.5 + ADAM_EPS);
        assert_abs_diff_eq!(params.w_i[[0, 0]], expected, epsilon = 1e-12);
        assert_eq!(opt.step_count(), 1);
        // Untouched coordinates keep their value.
        assert_eq!(params.b_f[0], 3.0);
    }
}
