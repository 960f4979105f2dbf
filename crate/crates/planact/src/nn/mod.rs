//! Minimal neural-network stack with hand-written backward passes.
//!
//! Every layer exposes `forward` (returning a cache of whatever the backward
//! pass needs) and `backward` (consuming the cache, accumulating parameter
//! gradients into a [`GradStore`] and returning the input gradient).
//! Parameters are plain `Vec<S>` fields addressed by dotted names through the
//! [`Params`] visitor, which is what the optimizer, the checkpoint writer and
//! the finite-difference gradient checker all iterate over.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod mat;
pub mod transformer;

use crate::scalar::Scalar;
use std::collections::HashMap;

/// Named gradient accumulator.
#[derive(Default)]
pub struct GradStore<S> {
    grads: HashMap<String, Vec<S>>,
}

impl<S: Scalar> GradStore<S> {
    pub fn new() -> Self {
        GradStore { grads: HashMap::new() }
    }

    /// Gradient buffer for `name`, created zeroed on first use.
    pub fn acc(&mut self, name: &str, len: usize) -> &mut [S] {
        let buf = self
            .grads
            .entry(name.to_string())
            .or_insert_with(|| vec![S::zero(); len]);
        assert_eq!(buf.len(), len, "gradient shape mismatch for {name}");
        buf
    }

    pub fn get(&self, name: &str) -> Option<&[S]> {
        self.grads.get(name).map(|v| v.as_slice())
    }

    pub fn merge(&mut self, other: GradStore<S>) {
        for (name, g) in other.grads {
            match self.grads.get_mut(&name) {
                Some(buf) => {
                    for (a, b) in buf.iter_mut().zip(&g) {
                        *a += *b;
                    }
                }
                None => {
                    self.grads.insert(name, g);
                }
            }
        }
    }

    pub fn scale(&mut self, s: S) {
        for g in self.grads.values_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn clear(&mut self) {
        self.grads.clear();
    }
}

/// Visitor over named parameter tensors in a fixed, deterministic order.
pub trait Params<S: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [S]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.len());
        n
    }

    /// Order-sensitive checksum over raw parameter bits; used by the
    /// frozen-weight invariance tests.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        self.visit("", &mut |name, p| {
            for b in name.as_bytes() {
                h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
            }
            for v in p {
                let bits = v.as_f64().to_bits();
                h = (h ^ bits).wrapping_mul(0x100000001b3);
            }
        });
        h
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
