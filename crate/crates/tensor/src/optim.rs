use crate::error::TensorError;
use crate::param::ParamStore;
use crate::real::Real;

/// Adam with bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    /// Applies one update to every parameter from its stored gradient.
    ///
    /// All gradients are checked before anything is written, so a
    /// non-finite gradient leaves the store untouched.
    pub fn step<F: Real>(&self, store: &mut ParamStore<F>) -> Result<(), TensorError> {
        if let Some(p) = store.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(TensorError::NonFiniteGradient(p.name.clone()));
        }
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let eps = F::from_f64(self.eps);
        let lr = F::from_f64(self.lr);
        for p in store.iter_mut() {
            p.step_count += 1;
            let t = p.step_count.min(i32::MAX as u64) as i32;
            let bc1 = one - b1.powi(t);
            let bc2 = one - b2.powi(t);
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = p.grad[i];
                let m = b1 * p.adam_m[i] + (one - b1) * g;
                let v = b2 * p.adam_v[i] + (one - b2) * g * g;
                p.adam_m[i] = m;
                p.adam_v[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn store_with(values: &[f64], grads: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap()).unwrap();
        s.get_mut(id).grad.copy_from_slice(grads);
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = store_with(&[0.5, -1.0, 2.0], &[0.0, 0.0, 0.0]);
        Adam::default().step(&mut s).unwrap();
        let p = s.by_name("w").unwrap();
        assert_eq!(p.value.data(), &[0.5, -1.0, 2.0]);
        assert!(p.adam_m.iter().all(|&m| m == 0.0));
        assert!(p.adam_v.iter().all(|&v| v == 0.0));
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With bias correction, m_hat = g and v_hat = g^2 on the first step,
        // so the update is lr * g / (|g| + eps).
        let grads = [0.3, -2.0, 1e-3];
        let mut s = store_with(&[0.0, 0.0, 0.0], &grads);
        let adam = Adam::default();
        adam.step(&mut s).unwrap();
        let p = s.by_name("w").unwrap();
        for (x, g) in p.value.data().iter().zip(grads) {
            let expected = -adam.lr * g / (g.abs() + adam.eps);
            assert!((x - expected).abs() < 1e-15, "{x} vs {expected}");
            assert!((x.abs() - adam.lr).abs() < adam.lr * 1e-4);
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut s = store_with(&[1.0], &[f64::NAN]);
        let err = Adam::default().step(&mut s).unwrap_err();
        assert_eq!(err, TensorError::NonFiniteGradient("w".into()));
        assert_eq!(s.by_name("w").unwrap().value.data(), &[1.0]);
        assert_eq!(s.by_name("w").unwrap().step_count, 0);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut s = store_with(&[0.0, 0.0], &[3.0, 4.0]);
        let before = s.clip_grad_norm(1.0);
        assert_eq!(before, 5.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-12);
        let mut s = store_with(&[0.0, 0.0], &[0.3, 0.4]);
        s.clip_grad_norm(5.0);
        assert_eq!(s.by_name("w").unwrap().grad, vec![0.3, 0.4]);
    }
}
