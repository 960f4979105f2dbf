//! Adaptive-moment optimizer over named parameter tensors.

use super::GradStore;
use crate::scalar::Scalar;
use std::collections::HashMap;

pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    t: u64,
    m: HashMap<String, Vec<S>>,
    v: HashMap<String, Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr: S::from_f64(lr),
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            eps: S::from_f64(1e-8),
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// One update over every (name, param) the caller visits. Parameters whose
    /// name has no gradient in `grads` are left untouched, which is how frozen
    /// tensors stay frozen: they are simply never visited / never have grads.
    ///
    /// `lr_scale` implements schedules (linear decay passes (1 - t/T)).
    pub fn step(
        &mut self,
        grads: &GradStore<S>,
        lr_scale: S,
        visit: impl FnOnce(&mut dyn FnMut(&str, &mut [S])),
    ) {
        self.t += 1;
        let t = S::from_f64(self.t as f64);
        let bc1 = S::one() - self.beta1.powf(t);
        let bc2 = S::one() - self.beta2.powf(t);
        let lr = self.lr * lr_scale;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let m = &mut self.m;
        let v = &mut self.v;
        visit(&mut |name, p| {
            let Some(g) = grads.get(name) else { return };
            assert_eq!(g.len(), p.len(), "grad shape mismatch for {name}");
            let ms = m.entry(name.to_string()).or_insert_with(|| vec![S::zero(); p.len()]);
            let vs = v.entry(name.to_string()).or_insert_with(|| vec![S::zero(); p.len()]);
            for i in 0..p.len() {
                ms[i] = b1 * ms[i] + (S::one() - b1) * g[i];
                vs[i] = b2 * vs[i] + (S::one() - b2) * g[i] * g[i];
                let mhat = ms[i] / bc1;
                let vhat = vs[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Two {
        a: Vec<f64>,
        b: Vec<f64>,
    }

    impl crate::nn::Params<f64> for Two {
        fn visit(&self, _p: &str, f: &mut dyn FnMut(&str, &[f64])) {
            f("a", &self.a);
            f("b", &self.b);
        }
        fn visit_mut(&mut self, _p: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
            f("a", &mut self.a);
            f("b", &mut self.b);
        }
    }

    #[test]
    fn minimizes_quadratic_and_leaves_gradless_params_alone() {
        let mut model = Two { a: vec![3.0, -2.0], b: vec![1.5] };
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let mut grads = GradStore::new();
            // d/da of |a|^2/2 is a; no gradient is ever produced for b.
            let g = grads.acc("a", 2);
            g[0] = model.a[0];
            g[1] = model.a[1];
            opt.step(&grads, 1.0, |f| {
                f("a", &mut model.a);
                f("b", &mut model.b);
            });
        }
        assert!(model.a[0].abs() < 1e-4 && model.a[1].abs() < 1e-4);
        assert_eq!(model.b, vec![1.5]);
    }
}
