//! Convolutional depth-image encoder.
//!
//! Pretrained once on an auxiliary visibility task (which categories are
//! visible, drawer state, any-cut) and then frozen; the planner only tunes a
//! small linear adapter on top of the frozen feature.

use crate::corpus::{enumerate_tasks, run_oracle_plan, scenario_for, Instruction};
use crate::nn::conv::Conv2d;
use crate::nn::layers::{bce_with_logits, Linear};
use crate::nn::mat::Mat;
use crate::nn::adam::Adam;
use crate::nn::{join, GradStore, Params};
use crate::scalar::Scalar;
use crate::sim::{render_depth, reset_scenario, CameraModel, CameraNoise, DEPTH_H, DEPTH_W};
use crate::{Error, Real, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Categories visible on the table or in the open drawer (8 bits), drawer
/// open, any visible cut object.
pub const AUX_BITS: usize = crate::domain::ALL_CATEGORIES.len() + 2;

const H1: usize = DEPTH_H / 2;
const W1: usize = DEPTH_W / 2;
/// Fixed triangular height-binning channels. Depth is a height field whose
/// *values* carry identity; band-pass input channels make "is height h
/// here" linearly separable, which thresholded convolutions alone are not.
const BINS: usize = 12;
const BIN_MAX: f64 = 0.9;
const C1: usize = 12;
const C2: usize = 16;
/// Region max-pool window: the post-conv map splits into 3x4 regions, which
/// keeps "where roughly" (drawer corner vs table vs bin) while making "is
/// this height present" position-invariant inside a region.
const POOL: usize = 4;
const REG_H: usize = H1 / POOL;
const REG_W: usize = W1 / POOL;
const POOLED: usize = C2 * REG_H * REG_W;

pub struct ImageEncoder<S> {
    pub conv1: Conv2d<S>, // 1 -> C1, stride 2
    pub conv2: Conv2d<S>, // C1 -> C2, stride 1
    pub fc: Linear<S>,    // POOLED -> dim
    pub dim: usize,
}

pub struct ImageCache<S> {
    x: Vec<S>,
    h1_pre: Vec<S>,
    h1: Vec<S>,
    h2_pre: Vec<S>,
    pooled: Mat<S>,
    argmax: Vec<usize>,
}

fn region_max_pool<S: Scalar>(h: &[S]) -> (Vec<S>, Vec<usize>) {
    let mut out = vec![S::neg_infinity(); POOLED];
    let mut arg = vec![0usize; POOLED];
    for c in 0..C2 {
        for ry in 0..REG_H {
            for rx in 0..REG_W {
                let o = (c * REG_H + ry) * REG_W + rx;
                for dy in 0..POOL {
                    for dx in 0..POOL {
                        let idx = c * H1 * W1 + (ry * POOL + dy) * W1 + (rx * POOL + dx);
                        if h[idx] > out[o] {
                            out[o] = h[idx];
                            arg[o] = idx;
                        }
                    }
                }
            }
        }
    }
    (out, arg)
}

impl<S: Scalar> ImageEncoder<S> {
    pub fn new<R: Rng>(dim: usize, rng: &mut R) -> Self {
        ImageEncoder {
            conv1: Conv2d::new(BINS, C1, 2, rng),
            conv2: Conv2d::new(C1, C2, 1, rng),
            fc: Linear::new(POOLED, dim, rng),
            dim,
        }
    }

    pub fn forward(&self, depth: &[f32]) -> (Vec<S>, ImageCache<S>) {
        assert_eq!(depth.len(), DEPTH_H * DEPTH_W);
        let x = height_bins(depth);
        let h1_pre = self.conv1.forward(&x, DEPTH_H, DEPTH_W);
        let h1 = relu_vec(&h1_pre);
        let h2_pre = self.conv2.forward(&h1, H1, W1);
        let h2 = relu_vec(&h2_pre);
        let (pooled, argmax) = region_max_pool(&h2);
        let pooled = Mat { rows: 1, cols: POOLED, data: pooled };
        let feat = self.fc.forward(&pooled);
        (feat.data.clone(), ImageCache { x, h1_pre, h1, h2_pre, pooled, argmax })
    }

    pub fn encode(&self, depth: &[f32]) -> Vec<S> {
        self.forward(depth).0
    }

    pub fn backward(&self, cache: &ImageCache<S>, dfeat: &[S], name: &str, grads: &mut GradStore<S>) {
        let dy = Mat { rows: 1, cols: self.dim, data: dfeat.to_vec() };
        let dpooled = self.fc.backward(&cache.pooled, &dy, &join(name, "fc"), grads, true);
        let mut dh2 = vec![S::zero(); C2 * H1 * W1];
        for (o, &idx) in cache.argmax.iter().enumerate() {
            dh2[idx] += dpooled.data[o];
        }
        for (d, &v) in dh2.iter_mut().zip(&cache.h2_pre) {
            if v <= S::zero() {
                *d = S::zero();
            }
        }
        let dh1 = self.conv2.backward(&cache.h1, H1, W1, &dh2, &join(name, "conv2"), grads, true);
        let mut dh1_pre = dh1;
        for (d, &v) in dh1_pre.iter_mut().zip(&cache.h1_pre) {
            if v <= S::zero() {
                *d = S::zero();
            }
        }
        self.conv1.backward(&cache.x, DEPTH_H, DEPTH_W, &dh1_pre, &join(name, "conv1"), grads, true);
    }
}

fn relu_vec<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| if v < S::zero() { S::zero() } else { v }).collect()
}

/// CHW soft one-hot of the height field over BINS triangular basis channels.
fn height_bins<S: Scalar>(depth: &[f32]) -> Vec<S> {
    let spacing = BIN_MAX / (BINS - 1) as f64;
    let mut out = vec![S::zero(); BINS * depth.len()];
    for (i, &v) in depth.iter().enumerate() {
        let v = v as f64;
        for b in 0..BINS {
            let w = 1.0 - (v - b as f64 * spacing).abs() / spacing;
            if w > 0.0 {
                out[b * depth.len() + i] = S::from_f64(w);
            }
        }
    }
    out
}

impl<S: Scalar> Params<S> for ImageEncoder<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.fc.visit(&join(prefix, "fc"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [S])) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.fc.visit_mut(&join(prefix, "fc"), f);
    }
}

/// Auxiliary visibility labels for the pretraining task.
pub fn visibility_bits(w: &crate::sim::WorldState) -> Vec<f64> {
    let mut bits = vec![0.0; AUX_BITS];
    let held = w.held_object().map(|o| o.id);
    let visible = |o: &crate::sim::ObjectInstance| {
        Some(o.id) != held && (o.on_table() || (o.in_drawer && w.drawer_open))
    };
    for o in w.objects.iter().filter(|o| visible(o)) {
        let idx = crate::domain::ALL_CATEGORIES.iter().position(|&c| c == o.category).unwrap();
        bits[idx] = 1.0;
        if o.cut {
            bits[AUX_BITS - 1] = 1.0;
        }
    }
    if w.drawer_open {
        bits[AUX_BITS - 2] = 1.0;
    }
    bits
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ImagePretrainConfig {
    pub scenes: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ImagePretrainConfig {
    fn default() -> Self {
        ImagePretrainConfig { scenes: 2000, epochs: 14, batch: 16, lr: 1e-3, seed: 7 }
    }
}

#[derive(Clone, Debug)]
pub struct ImagePretrainReport {
    pub holdout_bit_accuracy: f64,
    pub final_loss: f64,
}

/// Renders task-distribution scenes (including mid-episode states) and the
/// matching visibility labels.
fn pretrain_samples(n: usize, seed: u64) -> Result<Vec<(Vec<f32>, Vec<f64>)>> {
    let specs = enumerate_tasks();
    let noise = CameraNoise::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let spec = &specs[rng.gen_range(0..specs.len())];
        let inst = Instruction::sample(spec.id, &mut rng);
        let cfg = scenario_for(spec.id, inst.target);
        let w = reset_scenario(&cfg, rng.gen())?;
        // Walk the oracle plan and record a random prefix of its states so
        // drawers end up in both positions and objects in every container.
        let (plan, _, _) = run_oracle_plan(&w, &inst, crate::corpus::dataset::MAX_PLAN_STEPS)?;
        let keep = rng.gen_range(0..plan.len());
        let mut w = w;
        for (i, skill) in plan.iter().enumerate() {
            if i == keep || out.len() >= n {
                break;
            }
            let (next, _) = crate::corpus::oracle_skill_executor(&w, skill);
            w = next;
        }
        let cam = CameraModel::sample(&noise, &mut rng);
        out.push((render_depth(&w, &cam).data, visibility_bits(&w)));
    }
    Ok(out)
}

/// Trains the encoder on the visibility task and verifies held-out bit
/// accuracy. The returned encoder is meant to be frozen by the caller.
pub fn pretrain_image_encoder(
    dim: usize,
    cfg: &ImagePretrainConfig,
) -> Result<(ImageEncoder<Real>, ImagePretrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = pretrain_samples(cfg.scenes, cfg.seed ^ 0xA5A5)?;
    let n_hold = (samples.len() / 10).max(1);
    let (hold, train) = samples.split_at(n_hold);

    let mut enc = ImageEncoder::<Real>::new(dim, &mut rng);
    let mut head = Linear::<Real>::new(dim, AUX_BITS, &mut rng);
    let mut opt = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut last_loss = 0.0f64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch) {
            let mut grads = GradStore::new();
            for &i in chunk {
                let (depth, bits) = &train[i];
                let (feat, cache) = enc.forward(depth);
                let fm = Mat { rows: 1, cols: dim, data: feat };
                let logits = head.forward(&fm);
                let targets: Vec<Real> = bits.iter().map(|&b| b as Real).collect();
                let (loss, dlogits) = bce_with_logits(&logits.data, &targets);
                epoch_loss += loss as f64;
                let dl = Mat { rows: 1, cols: AUX_BITS, data: dlogits };
                let dfeat = head.backward(&fm, &dl, "head", &mut grads, true);
                enc.backward(&cache, &dfeat.data, "enc", &mut grads);
            }
            grads.scale(1.0 / chunk.len() as Real);
            opt.step(&grads, 1.0, |f| {
                enc.visit_mut("enc", f);
                head.visit_mut("head", f);
            });
        }
        last_loss = epoch_loss / train.len() as f64;
    }

    let mut correct = 0usize;
    for (depth, bits) in hold {
        let fm = Mat { rows: 1, cols: dim, data: enc.encode(depth) };
        let logits = head.forward(&fm);
        for (l, &b) in logits.data.iter().zip(bits.iter()) {
            if (*l > 0.0) == (b > 0.5) {
                correct += 1;
            }
        }
    }
    let acc = correct as f64 / (hold.len() * AUX_BITS) as f64;
    if acc < 0.85 {
        return Err(Error::Training(format!(
            "image encoder pretraining failed: holdout bit accuracy {acc:.3}"
        )));
    }
    Ok((enc, ImagePretrainReport { holdout_bit_accuracy: acc, final_loss: last_loss }))
}
