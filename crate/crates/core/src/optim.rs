//! AdamW with decoupled weight decay.

use crate::graph::{Gradients, ParamStore};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Matrix,
    v: Matrix,
    t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    state: Vec<Option<Moments>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, state: Vec::new() }
    }

    /// Updates every parameter that received a gradient. Parameters without
    /// one (other tables' heads, an unused regularizer) keep both their
    /// values and their moment estimates.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        if self.state.len() < store.len() {
            self.state.resize(store.len(), None);
        }
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let p = store.get_mut(id);
            let st = self.state[id.0].get_or_insert_with(|| Moments {
                m: Matrix::zeros(p.rows, p.cols),
                v: Matrix::zeros(p.rows, p.cols),
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - self.beta1.powi(st.t as i32);
            let bc2 = 1.0 - self.beta2.powi(st.t as i32);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                st.m.data[i] = self.beta1 * st.m.data[i] + (1.0 - self.beta1) * gi;
                st.v.data[i] = self.beta2 * st.v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = st.m.data[i] / bc1;
                let vhat = st.v.data[i] / bc2;
                p.data[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * p.data[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::from_vec(1, 2, vec![1.0, -2.0]));
        let b = store.add("b", Matrix::from_vec(1, 1, vec![5.0]));
        let grads = {
            let mut g = Graph::new(&store);
            let x = g.param(a);
            let sq = g.mse(x, vec![0.0, 0.0]);
            g.backward(sq).unwrap()
        };
        let mut opt = AdamW::new(0.0);
        opt.step(&mut store, &grads, 0.1);
        let p = store.get(a);
        assert!((p.data[0] - 0.9).abs() < 1e-6);
        assert!((p.data[1] + 1.9).abs() < 1e-6);
        assert_eq!(store.get(b).data[0], 5.0);
    }

    #[test]
    fn decay_shrinks_weights() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::from_vec(1, 1, vec![2.0]));
        let grads = {
            let mut g = Graph::new(&store);
            let x = g.param(a);
            let z = g.scale(x, 0.0);
            let l = g.mse(z, vec![0.0]);
            g.backward(l).unwrap()
        };
        let mut opt = AdamW::new(0.5);
        opt.step(&mut store, &grads, 0.1);
        assert!((store.get(a).data[0] - 1.9).abs() < 1e-12);
    }
}
