//! 3x3 Conv2d (pad 1) over CHW buffers, with manual backward.

use super::{join, GradStore, Params};
use crate::scalar::Scalar;
use rand::Rng;

pub struct Conv2d<S> {
    /// (out_c, in_c, 3, 3)
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub in_c: usize,
    pub out_c: usize,
    pub stride: usize,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new<R: Rng>(in_c: usize, out_c: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = in_c * 9;
        let bound = (6.0 / (fan_in + out_c * 9) as f64).sqrt();
        Conv2d {
            w: (0..out_c * in_c * 9).map(|_| S::from_f64(rng.gen_range(-bound..bound))).collect(),
            // Small nonzero bias keeps dead input windows off the relu kink.
            b: (0..out_c).map(|_| S::from_f64(rng.gen_range(-0.05..0.05))).collect(),
            in_c,
            out_c,
            stride,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + self.stride - 1) / self.stride, (w + self.stride - 1) / self.stride)
    }

    pub fn forward(&self, x: &[S], h: usize, w: usize) -> Vec<S> {
        assert_eq!(x.len(), self.in_c * h * w);
        let (oh, ow) = self.out_hw(h, w);
        let mut y = vec![S::zero(); self.out_c * oh * ow];
        for oc in 0..self.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.b[oc];
                    let cy = (oy * self.stride) as isize;
                    let cx = (ox * self.stride) as isize;
                    for ic in 0..self.in_c {
                        for ky in 0..3usize {
                            let iy = cy + ky as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3usize {
                                let ix = cx + kx as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[ic * h * w + iy as usize * w + ix as usize];
                                let wv = self.w[((oc * self.in_c + ic) * 3 + ky) * 3 + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    y[oc * oh * ow + oy * ow + ox] = acc;
                }
            }
        }
        y
    }

    pub fn backward(
        &self,
        x: &[S],
        h: usize,
        w: usize,
        dy: &[S],
        name: &str,
        grads: &mut GradStore<S>,
        wgrads: bool,
    ) -> Vec<S> {
        let (oh, ow) = self.out_hw(h, w);
        assert_eq!(dy.len(), self.out_c * oh * ow);
        let mut dx = vec![S::zero(); x.len()];
        let (mut dw, mut db) = (vec![S::zero(); self.w.len()], vec![S::zero(); self.b.len()]);
        for oc in 0..self.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dy[oc * oh * ow + oy * ow + ox];
                    if g == S::zero() {
                        continue;
                    }
                    db[oc] += g;
                    let cy = (oy * self.stride) as isize;
                    let cx = (ox * self.stride) as isize;
                    for ic in 0..self.in_c {
                        for ky in 0..3usize {
                            let iy = cy + ky as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3usize {
                                let ix = cx + kx as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = ic * h * w + iy as usize * w + ix as usize;
                                let wi = ((oc * self.in_c + ic) * 3 + ky) * 3 + kx;
                                dw[wi] += g * x[xi];
                                dx[xi] += g * self.w[wi];
                            }
                        }
                    }
                }
            }
        }
        if wgrads {
            let gw = grads.acc(&join(name, "w"), self.w.len());
            for (a, b) in gw.iter_mut().zip(&dw) {
                *a += *b;
            }
            let gb = grads.acc(&join(name, "b"), self.b.len());
            for (a, b) in gb.iter_mut().zip(&db) {
                *a += *b;
            }
        }
        dx
    }
}

impl<S: Scalar> Params<S> for Conv2d<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [S])) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::<f64>::new(2, 3, 2, &mut rng);
        let (h, w) = (6, 8);
        let x: Vec<f64> = (0..2 * h * w).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let loss = |c: &Conv2d<f64>, x: &[f64]| -> f64 {
            c.forward(x, h, w).iter().map(|v| v * v).sum::<f64>() / 2.0
        };
        let y = conv.forward(&x, h, w);
        let mut grads = GradStore::new();
        let dx = conv.backward(&x, h, w, &y, "c", &mut grads, true);
        let hh = 1e-6;
        let gw = grads.get("c.w").unwrap().to_vec();
        for i in 0..conv.w.len() {
            let orig = conv.w[i];
            conv.w[i] = orig + hh;
            let lp = loss(&conv, &x);
            conv.w[i] = orig - hh;
            let lm = loss(&conv, &x);
            conv.w[i] = orig;
            let fd = (lp - lm) / (2.0 * hh);
            assert!((fd - gw[i]).abs() < 1e-5, "dw[{i}]: {fd} vs {}", gw[i]);
        }
        let mut x2 = x.clone();
        for i in 0..x2.len() {
            let orig = x2[i];
            x2[i] = orig + hh;
            let lp = loss(&conv, &x2);
            x2[i] = orig - hh;
            let lm = loss(&conv, &x2);
            x2[i] = orig;
            let fd = (lp - lm) / (2.0 * hh);
            assert!((fd - dx[i]).abs() < 1e-5, "dx[{i}]: {fd} vs {}", dx[i]);
        }
    }
}
