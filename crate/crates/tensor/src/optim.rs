use crate::{Element, ParamStore};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// Applies one update to every parameter from its current gradient.
    /// Gradients are left untouched; callers reset them between steps.
    pub fn step<T: Element>(&self, store: &mut ParamStore<T>) {
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        for p in store.iter_mut() {
            p.step += 1;
            let t = p.step as i32;
            let c1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
            let c2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
            let lr = T::from_f64_lossy(self.lr);
            let eps = T::from_f64_lossy(self.eps);
            let m = p.first_moment.data_mut();
            let v = p.second_moment.data_mut();
            let g = p.grad.data();
            let x = p.value.data_mut();
            for i in 0..x.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                x[i] = x[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Graph, Tensor};

    #[test]
    fn zero_gradient_first_step_is_a_no_op() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("p", Tensor::full([1, 1, 1, 1], 0.7)).unwrap();
        Adam::with_lr(0.1).step(&mut s);
        assert_eq!(s.get(id).value.data()[0], 0.7);
        assert_eq!(s.get(id).step(), 1);
    }

    /// Scalar Adam stepped by hand.
    fn reference_adam(p0: f64, grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        p
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        for g in [2.5, -0.003] {
            let mut s = ParamStore::<f64>::new();
            let id = s.add("p", Tensor::scalar(1.0)).unwrap();
            s.get_mut(id).grad = Tensor::scalar(g);
            Adam::with_lr(0.01).step(&mut s);
            let p = s.get(id).value.data()[0];
            assert!((p - reference_adam(1.0, &[g], 0.01)).abs() < 1e-15);
            assert!((p - (1.0 - 0.01 * g.signum())).abs() < 1e-6);
        }
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("p", Tensor::scalar(0.0)).unwrap();
        let adam = Adam::with_lr(0.1);
        for _ in 0..100 {
            s.zero_grad();
            let grads = {
                let g = Graph::new(&s);
                let p = g.param(id);
                let d = g.add_scalar(p, -3.0);
                let sq = g.mul(d, d).unwrap();
                let loss = g.sum_all(sq);
                g.backward(loss).unwrap()
            };
            s.accumulate(&grads);
            adam.step(&mut s);
        }
        let p = s.get(id).value.data()[0];
        assert!((p - 3.0).abs() < 0.05, "p = {p}");
    }
}
