//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self::with_betas(store, lr, (0.9, 0.999), 1e-8)
    }

    pub fn with_betas(store: &ParamStore, lr: f64, betas: (f64, f64), eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that holds a gradient. Parameters that
    /// did not receive a gradient since the last `zero_grad` are skipped.
    /// Errors if the store holds no gradient at all.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if !store.any_grad() {
            return Err(Error::contract("adam step without any populated gradient"));
        }
        if store.len() != self.m.len() {
            return Err(Error::contract("optimizer state does not match parameter store"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let Some((value, grad)) = store.grad_parts_mut(id) else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((w, &g), mi), vi) in value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    fn quadratic_step(store: &mut ParamStore, opt: &mut Adam, target: &[f64], scales: &[f64]) {
        let id = store.ids().next().unwrap();
        store.zero_grad();
        let mut tape = Tape::new();
        let w = store.var(&mut tape, id);
        let t = tape.constant(Tensor::row_vector(target.to_vec()));
        let s = tape.constant(Tensor::row_vector(scales.to_vec()));
        let d = tape.sub(w, t).unwrap();
        let sq = tape.square(d);
        let weighted = tape.mul(sq, s).unwrap();
        let l = tape.sum(weighted);
        tape.backward(l).unwrap();
        store.accumulate(&tape);
        opt.step(store).unwrap();
    }

    #[test]
    fn one_step_descends() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(vec![1.0])).unwrap();
        let mut opt = Adam::new(&store, 0.001);
        quadratic_step(&mut store, &mut opt, &[0.0], &[1.0]);
        assert!(store.get(id).data()[0] < 1.0);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(vec![2.0])).unwrap();
        let mut opt = Adam::new(&store, 0.1);
        quadratic_step(&mut store, &mut opt, &[2.0], &[1.0]);
        assert_eq!(store.get(id).data(), &[2.0]);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row_vector(vec![2.0])).unwrap();
        let mut opt = Adam::new(&store, 0.1);
        assert!(matches!(opt.step(&mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn convex_quadratic_reaches_closed_form_minimizer() {
        // f(w) = 1*(w0-3)^2 + 4*(w1+1)^2, minimizer (3, -1) in closed form.
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(vec![0.0, 0.0])).unwrap();
        let mut opt = Adam::new(&store, 0.05);
        for _ in 0..2000 {
            quadratic_step(&mut store, &mut opt, &[3.0, -1.0], &[1.0, 4.0]);
        }
        let w = store.get(id).data();
        let dist = ((w[0] - 3.0).powi(2) + (w[1] + 1.0).powi(2)).sqrt();
        assert!(dist < 1e-3, "distance {dist}");
    }
}
