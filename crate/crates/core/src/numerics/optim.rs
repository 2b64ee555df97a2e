use super::{Gradients, ParameterStore};
use crate::error::{Error, Result};
use crate::Real;

/// Adam with bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: T) -> Self {
        Adam {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    /// Applies one update to every non-frozen parameter and advances the
    /// store's step counter. Parameters missing from `grads` get a zero
    /// gradient.
    pub fn step(&self, store: &mut ParameterStore<T>, grads: &Gradients<T>) -> Result<()> {
        for id in grads.ids() {
            if id.index() >= store.len() {
                return Err(Error::Config(format!(
                    "gradient for parameter #{} outside the store",
                    id.index()
                )));
            }
            let p = store.get(id);
            let g = grads.get(id).expect("listed id");
            let shape = match g {
                super::Grad::Dense(t) => t.shape().to_vec(),
                super::Grad::Rows { shape, .. } => shape.clone(),
            };
            if shape != p.value.shape() {
                return Err(Error::Shape {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: shape,
                });
            }
        }

        let t = store.step() + 1;
        store.set_step(t);
        let t = T::from_u64(t).expect("step");
        let bc1 = T::one() - self.beta1.powf(t);
        let bc2 = T::one() - self.beta2.powf(t);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let param = store.get_mut(id);
            if param.frozen {
                continue;
            }
            let g = grads.dense(id, param.value.shape());
            let values = param.value.data_mut().iter_mut();
            let moments = param.m.data_mut().iter_mut().zip(param.v.data_mut().iter_mut());
            for ((w, (m, v)), &gi) in values.zip(moments).zip(g.data()) {
                *m = self.beta1 * *m + (T::one() - self.beta1) * gi;
                *v = self.beta2 * *v + (T::one() - self.beta2) * gi * gi;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
