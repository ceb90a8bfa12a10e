use ndarray::{Array2, Zip};

use super::params::ParamStore;
use super::tape::ParamGrads;
use super::TensorError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment state for every parameter of one store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub(crate) m: Vec<Array2<f64>>,
    pub(crate) v: Vec<Array2<f64>>,
    pub(crate) step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<_> = store.ids().map(|id| Array2::zeros(store.value(id).dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Every parameter must have a gradient;
    /// parameters that did not influence the loss should carry explicit zeros
    /// (see [`ParamGrads::fill_missing`]).
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) -> Result<(), TensorError> {
        if let Some(id) = store.ids().find(|id| grads.get(*id).is_none()) {
            return Err(TensorError::MissingGradient(store.name(id).to_string()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let g = grads.get(id).expect("checked above");
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            Zip::from(store.value_mut(id))
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
                });
        }
        Ok(())
    }
}

impl ParamGrads {
    /// Inserts zero gradients for parameters the loss did not reach.
    pub fn fill_missing(&mut self, store: &ParamStore) {
        for id in store.ids() {
            let slot = &mut self.grads[id.index()];
            if slot.is_none() {
                *slot = Some(Array2::zeros(store.value(id).dim()));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store_with(value: Array2<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", value).unwrap();
        s
    }

    fn grads_of(store: &ParamStore, g: Array2<f64>) -> ParamGrads {
        let mut grads = ParamGrads::zeros_like(store);
        grads.grads[0] = Some(g);
        grads
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut store = store_with(array![[1.5, -2.0]]);
        let mut adam = Adam::new(&store);
        let g = grads_of(&store, array![[0.0, 0.0]]);
        for _ in 0..10 {
            adam.step(&mut store, &g, 1e-3).unwrap();
        }
        assert_eq!(store.value(store.id("p").unwrap()), &array![[1.5, -2.0]]);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        // With a constant gradient the bias-corrected ratio m/sqrt(v) is
        // exactly sign(g) (up to eps), so every step moves by lr.
        let mut store = store_with(array![[0.0, 0.0]]);
        let mut adam = Adam::new(&store);
        let g = grads_of(&store, array![[2.0, -0.5]]);
        let lr = 1e-2;
        let mut prev = store.value(store.id("p").unwrap()).clone();
        for _ in 0..200 {
            adam.step(&mut store, &g, lr).unwrap();
            let cur = store.value(store.id("p").unwrap()).clone();
            let d = &cur - &prev;
            assert!((d[[0, 0]] + lr).abs() < 1e-8);
            assert!((d[[0, 1]] - lr).abs() < 1e-7);
            prev = cur;
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = store_with(array![[0.0]]);
        let mut adam = Adam::new(&store);
        let g = ParamGrads::zeros_like(&store);
        assert!(matches!(
            adam.step(&mut store, &g, 1e-3),
            Err(TensorError::MissingGradient(_))
        ));
    }
}
