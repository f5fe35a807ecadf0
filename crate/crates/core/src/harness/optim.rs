use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{ParamId, ParamStore};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `lr₀ · (1 − t / total)` for global step `t`.
pub fn linear_decay(lr0: f64, t: usize, total: usize) -> f64 {
    lr0 * (1.0 - t as f64 / total as f64).max(0.0)
}

/// Adaptive moments with decoupled weight decay. Weight decay applies only
/// to parameters flagged for it.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<F> {
    pub weight_decay: f64,
    /// Updates applied so far (bias-correction step count).
    pub t: u64,
    pub m: Vec<Matrix<F>>,
    pub v: Vec<Matrix<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(params: &ParamStore<F>, weight_decay: f64) -> Self {
        let zeros = || {
            params
                .ids()
                .map(|id| {
                    let (r, c) = params.value(id).shape();
                    Matrix::zeros(r, c)
                })
                .collect::<Vec<_>>()
        };
        AdamW {
            weight_decay,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &HashMap<ParamId, Matrix<F>>, lr: f64) -> Result<()> {
        if let Some((id, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite {
                component: format!("gradient of {}", params.name(*id)),
            });
        }
        self.t += 1;
        let (b1, b2) = (F::of(BETA1), F::of(BETA2));
        let c1 = F::of(1.0 - BETA1.powi(self.t as i32));
        let c2 = F::of(1.0 - BETA2.powi(self.t as i32));
        let lr_f = F::of(lr);
        let eps = F::of(ADAM_EPS);
        let mut ids: Vec<&ParamId> = grads.keys().collect();
        ids.sort();
        for &id in ids {
            let g = &grads[&id];
            let decay = if params.decays(id) { F::of(lr * self.weight_decay) } else { F::zero() };
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = params.value_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = b1 * m[k] + (F::one() - b1) * gk;
                v[k] = b2 * v[k] + (F::one() - b2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] = p[k] - decay * p[k] - lr_f * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        assert_eq!(linear_decay(1e-3, 0, 10), 1e-3);
        assert!((linear_decay(1e-3, 5, 10) - 5e-4).abs() < 1e-15);
        assert_eq!(linear_decay(1e-3, 10, 10), 0.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::default();
        let a = store.add("a", Matrix::from_vec(1, 2, vec![1.0, -1.0]), false);
        let b = store.add("b", Matrix::from_vec(1, 1, vec![2.0]), true);
        let mut opt = AdamW::new(&store, 0.5);
        let grads = HashMap::from([(a, Matrix::from_vec(1, 2, vec![3.0, -0.2]))]);
        opt.step(&mut store, &grads, 0.1).unwrap();
        // Bias-corrected first step is lr · sign(g).
        let pa = store.value(a).data();
        assert!((pa[0] - 0.9).abs() < 1e-6 && (pa[1] + 0.9).abs() < 1e-6);
        assert_eq!(store.value(b).item(), 2.0);

        let grads = HashMap::from([(b, Matrix::scalar(0.0))]);
        opt.step(&mut store, &grads, 0.1).unwrap();
        assert!((store.value(b).item() - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);

        let bad = HashMap::from([(b, Matrix::scalar(f64::NAN))]);
        assert!(matches!(opt.step(&mut store, &bad, 0.1), Err(Error::NonFinite { .. })));
    }
}
