//! Linear, layer norm, embedding, softmax and cross-entropy primitives.

use super::mat::{matmul, matmul_nt, matmul_tn_acc, Mat};
use super::{join, GradStore, Params};
use crate::scalar::Scalar;
use rand::Rng;

pub struct Linear<S> {
    pub w: Mat<S>, // (in, out)
    pub b: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Linear { w: Mat::uniform(fan_in, fan_out, bound, rng), b: vec![S::zero(); fan_out] }
    }

    pub fn forward(&self, x: &Mat<S>) -> Mat<S> {
        let mut y = matmul(x, &self.w);
        for i in 0..y.rows {
            let row = y.row_mut(i);
            for (v, b) in row.iter_mut().zip(&self.b) {
                *v += *b;
            }
        }
        y
    }

    /// Returns dx. Skips the weight-gradient GEMMs when `wgrads` is false
    /// (frozen parameters only need the activation gradient to flow through).
    pub fn backward(
        &self,
        x: &Mat<S>,
        dy: &Mat<S>,
        name: &str,
        grads: &mut GradStore<S>,
        wgrads: bool,
    ) -> Mat<S> {
        if wgrads {
            let dw = grads.acc(&join(name, "w"), self.w.data.len());
            matmul_tn_acc(x, dy, dw);
            let db = grads.acc(&join(name, "b"), self.b.len());
            for i in 0..dy.rows {
                for (g, d) in db.iter_mut().zip(dy.row(i)) {
                    *g += *d;
                }
            }
        }
        matmul_nt(dy, &self.w)
    }
}

impl<S: Scalar> Params<S> for Linear<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        f(&join(prefix, "w"), &self.w.data);
        f(&join(prefix, "b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [S])) {
        f(&join(prefix, "w"), &mut self.w.data);
        f(&join(prefix, "b"), &mut self.b);
    }
}

pub struct LayerNorm<S> {
    pub g: Vec<S>,
    pub b: Vec<S>,
    pub eps: S,
}

pub struct LayerNormCache<S> {
    xhat: Mat<S>,
    rstd: Vec<S>,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(dim: usize) -> Self {
        LayerNorm { g: vec![S::one(); dim], b: vec![S::zero(); dim], eps: S::from_f64(1e-5) }
    }

    pub fn forward(&self, x: &Mat<S>) -> (Mat<S>, LayerNormCache<S>) {
        let n = S::from_usize(x.cols);
        let mut y = Mat::zeros(x.rows, x.cols);
        let mut xhat = Mat::zeros(x.rows, x.cols);
        let mut rstd = vec![S::zero(); x.rows];
        for i in 0..x.rows {
            let row = x.row(i);
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let r = S::one() / (var + self.eps).sqrt();
            rstd[i] = r;
            let xh = xhat.row_mut(i);
            let yr = y.row_mut(i);
            for j in 0..x.cols {
                xh[j] = (row[j] - mean) * r;
                yr[j] = xh[j] * self.g[j] + self.b[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache<S>,
        dy: &Mat<S>,
        name: &str,
        grads: &mut GradStore<S>,
        wgrads: bool,
    ) -> Mat<S> {
        let n = S::from_usize(dy.cols);
        let mut dx = Mat::zeros(dy.rows, dy.cols);
        if wgrads {
            let dg = grads.acc(&join(name, "g"), self.g.len());
            for i in 0..dy.rows {
                for j in 0..dy.cols {
                    dg[j] += dy.get(i, j) * cache.xhat.get(i, j);
                }
            }
            let db = grads.acc(&join(name, "b"), self.b.len());
            for i in 0..dy.rows {
                for (g, d) in db.iter_mut().zip(dy.row(i)) {
                    *g += *d;
                }
            }
        }
        for i in 0..dy.rows {
            let xh = cache.xhat.row(i);
            let dyr = dy.row(i);
            let mut sum_dxh = S::zero();
            let mut sum_dxh_xh = S::zero();
            // dxhat = dy * g
            for j in 0..dy.cols {
                let dxh = dyr[j] * self.g[j];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh[j];
            }
            let mean_dxh = sum_dxh / n;
            let mean_dxh_xh = sum_dxh_xh / n;
            let dxr = dx.row_mut(i);
            for j in 0..dy.cols {
                let dxh = dyr[j] * self.g[j];
                dxr[j] = cache.rstd[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
            }
        }
        dx
    }
}

impl<S: Scalar> Params<S> for LayerNorm<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        f(&join(prefix, "g"), &self.g);
        f(&join(prefix, "b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [S])) {
        f(&join(prefix, "g"), &mut self.g);
        f(&join(prefix, "b"), &mut self.b);
    }
}

pub struct Embedding<S> {
    pub table: Mat<S>, // (vocab, dim)
}

impl<S: Scalar> Embedding<S> {
    pub fn new<R: Rng>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        Embedding { table: Mat::uniform(vocab, dim, 0.5, rng) }
    }

    pub fn forward(&self, ids: &[usize]) -> Mat<S> {
        let mut out = Mat::zeros(ids.len(), self.table.cols);
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.table.row(id));
        }
        out
    }

    pub fn backward(&self, ids: &[usize], dy: &Mat<S>, name: &str, grads: &mut GradStore<S>) {
        let dt = grads.acc(&join(name, "table"), self.table.data.len());
        let c = self.table.cols;
        for (i, &id) in ids.iter().enumerate() {
            for (j, d) in dy.row(i).iter().enumerate() {
                dt[id * c + j] += *d;
            }
        }
    }
}

impl<S: Scalar> Params<S> for Embedding<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        f(&join(prefix, "table"), &self.table.data);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [S])) {
        f(&join(prefix, "table"), &mut self.table.data);
    }
}

pub fn relu<S: Scalar>(x: &Mat<S>) -> Mat<S> {
    let mut y = x.clone();
    for v in y.data.iter_mut() {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
    y
}

pub fn relu_backward<S: Scalar>(x: &Mat<S>, dy: &Mat<S>) -> Mat<S> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&x.data) {
        if v <= S::zero() {
            *d = S::zero();
        }
    }
    dx
}

/// Row-wise softmax, numerically stabilized.
pub fn softmax_rows<S: Scalar>(x: &Mat<S>) -> Mat<S> {
    let mut y = x.clone();
    for i in 0..y.rows {
        softmax_in_place(y.row_mut(i));
    }
    y
}

pub fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// d(loss)/d(logits) where rows of `probs` are softmax outputs and `drows`
/// the gradients w.r.t. those probabilities.
pub fn softmax_backward_row<S: Scalar>(probs: &[S], dprobs: &[S], out: &mut [S]) {
    let dot: S = probs.iter().zip(dprobs).map(|(&p, &d)| p * d).sum();
    for j in 0..probs.len() {
        out[j] = probs[j] * (dprobs[j] - dot);
    }
}

/// Cross-entropy of logits against target ids, summed over rows.
/// Returns (loss, dlogits).
pub fn cross_entropy<S: Scalar>(logits: &Mat<S>, targets: &[usize]) -> (S, Mat<S>) {
    assert_eq!(logits.rows, targets.len());
    let probs = softmax_rows(logits);
    let mut loss = S::zero();
    let mut dlogits = probs.clone();
    for (i, &t) in targets.iter().enumerate() {
        let p = probs.get(i, t).max(S::from_f64(1e-30));
        loss -= p.ln();
        let row = dlogits.row_mut(i);
        row[t] -= S::one();
    }
    (loss, dlogits)
}

/// Multi-label binary cross-entropy on raw logits, summed over entries.
/// Returns (loss, dlogits).
pub fn bce_with_logits<S: Scalar>(logits: &[S], targets: &[S]) -> (S, Vec<S>) {
    assert_eq!(logits.len(), targets.len());
    let mut loss = S::zero();
    let mut d = vec![S::zero(); logits.len()];
    for i in 0..logits.len() {
        let (x, t) = (logits[i], targets[i]);
        // log(1 + e^x) - t*x, computed stably.
        let m = x.max(S::zero());
        loss += m - x * t + ((-m).exp() + (x - m).exp()).ln();
        d[i] = S::one() / (S::one() + (-x).exp()) - t;
    }
    (loss, d)
}
