//! The skill policy network: factored categorical heads over gripper
//! commands plus a value head, conditioned on the skill's initial depth frame
//! and a goal vector (frozen language embedding of the skill sentence with
//! the live tactile bit appended).
//!
//! The planar displacement heads combine a direct logit pathway with a
//! goal-conditioned spatial score map over the conv features. The stride-2
//! conv output is grid-aligned with the world cells and every skill starts
//! from the home pose, so a score peak on a cell translates directly into the
//! displacement bins that reach it; row/column coordinate input channels let
//! the map score positions, not just appearances.

use crate::coarse::CoarseModel;
use crate::domain::{ActionLanguage, Goal};
use crate::nn::conv::Conv2d;
use crate::nn::layers::{relu_backward, softmax_in_place, Linear};
use crate::nn::mat::Mat;
use crate::nn::{join, GradStore, Params};
use crate::scalar::Scalar;
use crate::sim::action::{DX_BINS, DY_BINS};
use crate::sim::{
    apply_action, check_predicate, render_depth, CameraModel, ConcreteAction, Height, Held,
    SimEvent, WorldState, DEPTH_H, DEPTH_W, HEIGHT_LEVELS, HOME,
};
use crate::{Error, Real, Result};
use rand::Rng;
use std::collections::HashMap;
use std::path::Path;

/// Maximum concrete actions per skill attempt.
pub const H_SKILL: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PolicyConfig {
    /// Length of the skill embedding (the tactile bit is appended on top).
    pub goal_dim: usize,
    pub hidden: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { goal_dim: 64, hidden: 64, conv1_channels: 4, conv2_channels: 8 }
    }
}

impl PolicyConfig {
    /// Small enough for finite-difference gradient checks.
    pub fn tiny(goal_dim: usize) -> Self {
        PolicyConfig { goal_dim, hidden: 4, conv1_channels: 2, conv2_channels: 2 }
    }
}

/// One policy observation. `goal` is concat(L_e, tactile) and `depth` stays
/// fixed at the frame rendered when the skill started.
#[derive(Clone, Debug)]
pub struct FineState<S> {
    pub depth: Vec<S>,
    pub goal: Vec<S>,
}

impl<S: Scalar> FineState<S> {
    pub fn new(depth: &[f32], embedding: &[S], tactile: u8) -> FineState<S> {
        let mut goal = embedding.to_vec();
        goal.push(S::from_usize(tactile as usize));
        FineState { depth: depth.iter().map(|&d| S::from_f64(d as f64)).collect(), goal }
    }
}

/// Per-factor probabilities; the joint is their product.
#[derive(Clone, Debug)]
pub struct ActionDistribution<S> {
    pub dx: Vec<S>,
    pub dy: Vec<S>,
    pub z: Vec<S>,
    pub alpha: Vec<S>,
    pub beta: Vec<S>,
}

fn sample_cat<S: Scalar, R: Rng>(probs: &[S], rng: &mut R) -> usize {
    let u = S::from_f64(rng.gen::<f64>());
    let mut acc = S::zero();
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax<S: Scalar>(probs: &[S]) -> usize {
    let mut best = 0;
    for i in 1..probs.len() {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    best
}

fn entropy_of<S: Scalar>(probs: &[S]) -> S {
    let mut h = S::zero();
    for &p in probs {
        if p > S::zero() {
            h -= p * p.ln();
        }
    }
    h
}

impl<S: Scalar> ActionDistribution<S> {
    fn factors(&self) -> [&[S]; 5] {
        [&self.dx, &self.dy, &self.z, &self.alpha, &self.beta]
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> ConcreteAction {
        ConcreteAction {
            dx: sample_cat(&self.dx, rng),
            dy: sample_cat(&self.dy, rng),
            z: sample_cat(&self.z, rng),
            alpha: sample_cat(&self.alpha, rng),
            beta: sample_cat(&self.beta, rng),
        }
    }

    /// Per-factor argmax (deterministic evaluation mode).
    pub fn greedy(&self) -> ConcreteAction {
        ConcreteAction {
            dx: argmax(&self.dx),
            dy: argmax(&self.dy),
            z: argmax(&self.z),
            alpha: argmax(&self.alpha),
            beta: argmax(&self.beta),
        }
    }

    /// Log-probability of the joint action: sum of factor log-probs.
    pub fn log_prob(&self, a: &ConcreteAction) -> S {
        let floor = S::from_f64(1e-30);
        [self.dx[a.dx], self.dy[a.dy], self.z[a.z], self.alpha[a.alpha], self.beta[a.beta]]
            .iter()
            .map(|p| p.max(floor).ln())
            .sum()
    }

    /// Sum of factor entropies (= entropy of the joint).
    pub fn entropy(&self) -> S {
        self.factors().iter().map(|f| entropy_of(f)).sum()
    }
}

/// Conv block over the depth frame, feed-forward block over the goal vector,
/// shared trunk, five categorical heads, a score-map pathway into the
/// displacement heads, and one value head.
pub struct PolicyNet<S> {
    pub cfg: PolicyConfig,
    pub conv1: Conv2d<S>,
    pub conv2: Conv2d<S>,
    pub img_fc: Linear<S>,
    pub goal_fc: Linear<S>,
    pub trunk: Linear<S>,
    /// Channel weights turning the conv features into a per-cell score map.
    pub score_fc: Linear<S>,
    pub head_dx: Linear<S>,
    pub head_dy: Linear<S>,
    pub head_z: Linear<S>,
    pub head_alpha: Linear<S>,
    pub head_beta: Linear<S>,
    pub head_value: Linear<S>,
}

/// Score-map dimensions: the stride-2 conv output, one cell per world cell.
const MAP_H: usize = DEPTH_H / 2;
const MAP_W: usize = DEPTH_W / 2;

/// Triangular height-binning of the depth input, same basis the planner's
/// image encoder uses.
const IN_BINS: usize = 12;
const IN_BIN_MAX: f64 = 0.9;
/// Input channels: height bins plus row/column coordinates.
const IN_C: usize = IN_BINS + 2;

/// Displacement bin reaching map row `r` from the home pose, and back.
fn dx_bin_for_row(r: usize) -> usize {
    r + (MAP_H - 1) - HOME.0
}
fn dy_bin_for_col(c: usize) -> usize {
    c + (MAP_W - 1) - HOME.1
}

fn logsumexp<S: Scalar>(v: impl Iterator<Item = S> + Clone) -> S {
    let m = v.clone().fold(S::from_f64(f64::NEG_INFINITY), |a, b| a.max(b));
    (v.map(|x| (x - m).exp()).sum::<S>()).ln() + m
}

/// Activations the backward pass needs.
pub struct PolicyCache<S> {
    image_in: Vec<S>,
    a1: Vec<S>,
    r1: Vec<S>,
    a2: Vec<S>,
    r2: Mat<S>,
    goal_in: Mat<S>,
    img_pre: Mat<S>,
    goal_pre: Mat<S>,
    cat: Mat<S>,
    trunk_pre: Mat<S>,
    h: Mat<S>,
    gamma: Mat<S>,
    score: Vec<S>,
}

/// Upstream gradients for [`PolicyNet::backward`]: d(loss)/d(logits) per head
/// plus d(loss)/d(value).
pub struct HeadGrads<S> {
    pub dx: Vec<S>,
    pub dy: Vec<S>,
    pub z: Vec<S>,
    pub alpha: Vec<S>,
    pub beta: Vec<S>,
    pub value: S,
}

fn relu_vec<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| v.max(S::zero())).collect()
}

fn relu_mask<S: Scalar>(pre: &[S], dy: &mut [S]) {
    for (d, &p) in dy.iter_mut().zip(pre) {
        if p <= S::zero() {
            *d = S::zero();
        }
    }
}

impl<S: Scalar> PolicyNet<S> {
    pub fn new<R: Rng>(cfg: PolicyConfig, rng: &mut R) -> Self {
        let (c1, c2, hid) = (cfg.conv1_channels, cfg.conv2_channels, cfg.hidden);
        let flat = c2 * MAP_H * MAP_W;
        PolicyNet {
            // Height-binned depth plus two coordinate channels.
            conv1: Conv2d::new(IN_C, c1, 2, rng),
            conv2: Conv2d::new(c1, c2, 1, rng),
            img_fc: Linear::new(flat, hid, rng),
            goal_fc: Linear::new(cfg.goal_dim + 1, hid, rng),
            trunk: Linear::new(2 * hid, hid, rng),
            score_fc: Linear::new(hid, c2, rng),
            head_dx: Linear::new(hid, DX_BINS, rng),
            head_dy: Linear::new(hid, DY_BINS, rng),
            head_z: Linear::new(hid, HEIGHT_LEVELS, rng),
            head_alpha: Linear::new(hid, 2, rng),
            head_beta: Linear::new(hid, 2, rng),
            head_value: Linear::new(hid, 1, rng),
            cfg,
        }
    }

    /// Height-binned depth with normalized row/column coordinate channels
    /// appended. Depth *values* carry object identity; band-pass channels
    /// make "is height h here" linearly separable and insensitive to the
    /// per-episode camera jitter, which thresholded convolutions on the raw
    /// field are not.
    fn image_input(depth: &[S]) -> Vec<S> {
        let mut x = vec![S::zero(); IN_C * DEPTH_H * DEPTH_W];
        let spacing = IN_BIN_MAX / (IN_BINS - 1) as f64;
        for (i, &v) in depth.iter().enumerate() {
            let v = v.as_f64();
            for b in 0..IN_BINS {
                let w = 1.0 - (v - b as f64 * spacing).abs() / spacing;
                if w > 0.0 {
                    x[b * depth.len() + i] = S::from_f64(w);
                }
            }
        }
        x.truncate(IN_BINS * DEPTH_H * DEPTH_W);
        for r in 0..DEPTH_H {
            let v = S::from_f64(2.0 * r as f64 / (DEPTH_H - 1) as f64 - 1.0);
            x.extend(std::iter::repeat(v).take(DEPTH_W));
        }
        for _ in 0..DEPTH_H {
            for c in 0..DEPTH_W {
                x.push(S::from_f64(2.0 * c as f64 / (DEPTH_W - 1) as f64 - 1.0));
            }
        }
        x
    }

    pub fn forward(&self, s: &FineState<S>) -> (ActionDistribution<S>, S, PolicyCache<S>) {
        assert_eq!(s.depth.len(), DEPTH_H * DEPTH_W);
        assert_eq!(s.goal.len(), self.cfg.goal_dim + 1);
        let image_in = Self::image_input(&s.depth);
        let a1 = self.conv1.forward(&image_in, DEPTH_H, DEPTH_W);
        let r1 = relu_vec(&a1);
        let (h1, w1) = self.conv1.out_hw(DEPTH_H, DEPTH_W);
        let a2 = self.conv2.forward(&r1, h1, w1);
        let r2 = Mat::from_vec(1, a2.len(), relu_vec(&a2));
        let img_pre = self.img_fc.forward(&r2);
        let img_h = Mat::from_vec(1, img_pre.cols, relu_vec(&img_pre.data));
        let goal_in = Mat::from_vec(1, s.goal.len(), s.goal.clone());
        let goal_pre = self.goal_fc.forward(&goal_in);
        let goal_h = Mat::from_vec(1, goal_pre.cols, relu_vec(&goal_pre.data));
        let mut cat = Mat::zeros(1, 2 * self.cfg.hidden);
        cat.row_mut(0)[..self.cfg.hidden].copy_from_slice(img_h.row(0));
        cat.row_mut(0)[self.cfg.hidden..].copy_from_slice(goal_h.row(0));
        let trunk_pre = self.trunk.forward(&cat);
        let h = Mat::from_vec(1, trunk_pre.cols, relu_vec(&trunk_pre.data));

        // Per-cell score map: goal/image-conditioned channel combination of
        // the conv features.
        let gamma = self.score_fc.forward(&h);
        let c2 = self.cfg.conv2_channels;
        let mut score = vec![S::zero(); MAP_H * MAP_W];
        for k in 0..c2 {
            let g = gamma.data[k];
            let plane = &r2.data[k * MAP_H * MAP_W..(k + 1) * MAP_H * MAP_W];
            for (sv, &f) in score.iter_mut().zip(plane) {
                *sv += g * f;
            }
        }

        let head = |lin: &Linear<S>| -> Vec<S> {
            let mut logits = lin.forward(&h).data;
            softmax_in_place(&mut logits);
            logits
        };
        // Displacement logits: direct head plus the row/column marginals of
        // the score map (bins that reach a cell from the home pose).
        let mut dx_logits = self.head_dx.forward(&h).data;
        for r in 0..MAP_H {
            dx_logits[dx_bin_for_row(r)] +=
                logsumexp(score[r * MAP_W..(r + 1) * MAP_W].iter().copied());
        }
        softmax_in_place(&mut dx_logits);
        let mut dy_logits = self.head_dy.forward(&h).data;
        for c in 0..MAP_W {
            dy_logits[dy_bin_for_col(c)] +=
                logsumexp((0..MAP_H).map(|r| score[r * MAP_W + c]));
        }
        softmax_in_place(&mut dy_logits);

        let probs = ActionDistribution {
            dx: dx_logits,
            dy: dy_logits,
            z: head(&self.head_z),
            alpha: head(&self.head_alpha),
            beta: head(&self.head_beta),
        };
        let value = self.head_value.forward(&h).data[0];
        let cache = PolicyCache {
            image_in,
            a1,
            r1,
            a2,
            r2,
            goal_in,
            img_pre,
            goal_pre,
            cat,
            trunk_pre,
            h,
            gamma,
            score,
        };
        (probs, value, cache)
    }

    /// Accumulates parameter gradients for one forward pass. Gradients on the
    /// depth/goal inputs are discarded (they are data, not parameters).
    pub fn backward(&self, cache: &PolicyCache<S>, up: &HeadGrads<S>, grads: &mut GradStore<S>) {
        // Score-map contribution to the displacement logits: each marginal is
        // a logsumexp whose gradient is the softmax over its row/column.
        let mut dscore = vec![S::zero(); MAP_H * MAP_W];
        for r in 0..MAP_H {
            let g = up.dx[dx_bin_for_row(r)];
            if g == S::zero() {
                continue;
            }
            let row = &cache.score[r * MAP_W..(r + 1) * MAP_W];
            let lse = logsumexp(row.iter().copied());
            for (d, &sv) in dscore[r * MAP_W..(r + 1) * MAP_W].iter_mut().zip(row) {
                *d += g * (sv - lse).exp();
            }
        }
        for c in 0..MAP_W {
            let g = up.dy[dy_bin_for_col(c)];
            if g == S::zero() {
                continue;
            }
            let lse = logsumexp((0..MAP_H).map(|r| cache.score[r * MAP_W + c]));
            for r in 0..MAP_H {
                let sv = cache.score[r * MAP_W + c];
                dscore[r * MAP_W + c] += g * (sv - lse).exp();
            }
        }
        let c2 = self.cfg.conv2_channels;
        let mut dgamma = Mat::zeros(1, c2);
        let mut dr2_map = vec![S::zero(); cache.r2.data.len()];
        for k in 0..c2 {
            let plane = &cache.r2.data[k * MAP_H * MAP_W..(k + 1) * MAP_H * MAP_W];
            let dplane = &mut dr2_map[k * MAP_H * MAP_W..(k + 1) * MAP_H * MAP_W];
            let gk = cache.gamma.data[k];
            let mut acc = S::zero();
            for ((df, &ds), &f) in dplane.iter_mut().zip(&dscore).zip(plane) {
                acc += ds * f;
                *df = ds * gk;
            }
            dgamma.data[k] = acc;
        }

        let mut dh = Mat::zeros(1, self.cfg.hidden);
        let heads: [(&Linear<S>, &[S], &str); 5] = [
            (&self.head_dx, &up.dx, "dx"),
            (&self.head_dy, &up.dy, "dy"),
            (&self.head_z, &up.z, "z"),
            (&self.head_alpha, &up.alpha, "alpha"),
            (&self.head_beta, &up.beta, "beta"),
        ];
        for (lin, d, name) in heads {
            let dy = Mat::from_vec(1, d.len(), d.to_vec());
            dh.add_assign(&lin.backward(&cache.h, &dy, name, grads, true));
        }
        let dv = Mat::from_vec(1, 1, vec![up.value]);
        dh.add_assign(&self.head_value.backward(&cache.h, &dv, "value", grads, true));
        dh.add_assign(&self.score_fc.backward(&cache.h, &dgamma, "score", grads, true));

        let dtrunk_pre = relu_backward(&cache.trunk_pre, &dh);
        let dcat = self.trunk.backward(&cache.cat, &dtrunk_pre, "trunk", grads, true);
        let hid = self.cfg.hidden;
        let dimg_h = Mat::from_vec(1, hid, dcat.row(0)[..hid].to_vec());
        let dgoal_h = Mat::from_vec(1, hid, dcat.row(0)[hid..].to_vec());

        let dgoal_pre = relu_backward(&cache.goal_pre, &dgoal_h);
        let _ = self.goal_fc.backward(&cache.goal_in, &dgoal_pre, "goal_fc", grads, true);

        let dimg_pre = relu_backward(&cache.img_pre, &dimg_h);
        let dr2 = self.img_fc.backward(&cache.r2, &dimg_pre, "img_fc", grads, true);
        let mut da2 = dr2.data;
        for (a, b) in da2.iter_mut().zip(&dr2_map) {
            *a += *b;
        }
        relu_mask(&cache.a2, &mut da2);
        let (h1, w1) = self.conv1.out_hw(DEPTH_H, DEPTH_W);
        let mut da1 = self.conv2.backward(&cache.r1, h1, w1, &da2, "conv2", grads, true);
        relu_mask(&cache.a1, &mut da1);
        let _ = self.conv1.backward(&cache.image_in, DEPTH_H, DEPTH_W, &da1, "conv1", grads, true);
    }
}

impl<S: Scalar> Params<S> for PolicyNet<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.img_fc.visit(&join(prefix, "img_fc"), f);
        self.goal_fc.visit(&join(prefix, "goal_fc"), f);
        self.trunk.visit(&join(prefix, "trunk"), f);
        self.score_fc.visit(&join(prefix, "score"), f);
        self.head_dx.visit(&join(prefix, "dx"), f);
        self.head_dy.visit(&join(prefix, "dy"), f);
        self.head_z.visit(&join(prefix, "z"), f);
        self.head_alpha.visit(&join(prefix, "alpha"), f);
        self.head_beta.visit(&join(prefix, "beta"), f);
        self.head_value.visit(&join(prefix, "value"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [S])) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.img_fc.visit_mut(&join(prefix, "img_fc"), f);
        self.goal_fc.visit_mut(&join(prefix, "goal_fc"), f);
        self.trunk.visit_mut(&join(prefix, "trunk"), f);
        self.score_fc.visit_mut(&join(prefix, "score"), f);
        self.head_dx.visit_mut(&join(prefix, "dx"), f);
        self.head_dy.visit_mut(&join(prefix, "dy"), f);
        self.head_z.visit_mut(&join(prefix, "z"), f);
        self.head_alpha.visit_mut(&join(prefix, "alpha"), f);
        self.head_beta.visit_mut(&join(prefix, "beta"), f);
        self.head_value.visit_mut(&join(prefix, "value"), f);
    }
}

/// Frozen language embeddings for every sentence in the closed skill set.
#[derive(Clone, Debug)]
pub struct SkillEmbeddings {
    map: HashMap<ActionLanguage, Vec<Real>>,
    pub dim: usize,
}

impl SkillEmbeddings {
    pub fn from_coarse(model: &CoarseModel<Real>) -> SkillEmbeddings {
        let mut map = HashMap::new();
        for al in ActionLanguage::closed_set() {
            map.insert(al, model.skill_embedding(&al));
        }
        SkillEmbeddings { dim: model.dim(), map }
    }

    pub fn get(&self, skill: &ActionLanguage) -> Result<&[Real]> {
        self.map
            .get(skill)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("no embedding for skill '{}'", skill.text())))
    }
}

/// Ready pose at skill hand-off: gripper back over the home cell at table
/// height. A still-held drawer handle is released (drawer-toggle
/// postconditions say nothing about the grip), a held object is kept.
pub fn skill_ready(w: &WorldState) -> WorldState {
    let mut w = w.clone();
    if w.held == Some(Held::Handle) {
        w.held = None;
        w.gripper.closed = false;
    }
    w.gripper.cell = HOME;
    w.gripper.z = Height::Table;
    w.gripper.alpha = 0;
    w
}

/// Executes `goal` with greedy (per-factor argmax) actions for up to
/// `horizon` steps, stopping early once the skill postcondition holds.
/// Returns the final world, the postcondition outcome, the actions taken and
/// the simulator events they fired.
pub fn run_skill_policy(
    policy: &PolicyNet<Real>,
    emb: &SkillEmbeddings,
    w: &WorldState,
    goal: &ActionLanguage,
    horizon: usize,
    cam: &CameraModel,
) -> Result<(WorldState, bool, Vec<ConcreteAction>, Vec<SimEvent>)> {
    if goal.is_terminal() {
        return Ok((w.clone(), true, Vec::new(), Vec::new()));
    }
    let pred = |w: &WorldState| check_predicate(w, &Goal::Skill(*goal));
    if horizon == 0 {
        let ok = pred(w)?;
        return Ok((w.clone(), ok, Vec::new(), Vec::new()));
    }
    let mut w = skill_ready(w);
    let depth = render_depth(&w, cam).data;
    let le = emb.get(goal)?;
    let mut actions = Vec::new();
    let mut events = Vec::new();
    for _ in 0..horizon {
        if pred(&w)? {
            break;
        }
        let s = FineState::new(&depth, le, w.tactile());
        let (dist, _, _) = policy.forward(&s);
        let a = dist.greedy();
        let (next, _, ev) = apply_action(&w, &a);
        w = next;
        actions.push(a);
        events.extend(ev);
    }
    let ok = pred(&w)?;
    Ok((w, ok, actions, events))
}

#[derive(serde::Serialize, serde::Deserialize, Debug, Clone, PartialEq)]
pub struct PolicyHeader {
    pub kind: String,
    pub cfg: PolicyConfig,
    pub seed: u64,
}

pub fn save_policy(path: &Path, policy: &PolicyNet<Real>, seed: u64) -> Result<()> {
    let header = PolicyHeader { kind: "policy".into(), cfg: policy.cfg.clone(), seed };
    crate::nn::checkpoint::save(path, &header, policy)
}

pub fn load_policy(path: &Path) -> Result<PolicyNet<Real>> {
    use rand::SeedableRng;
    let mut policy =
        PolicyNet::new(PolicyConfig::default(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
    let header: PolicyHeader = crate::nn::checkpoint::load(path, &mut policy)?;
    if header.kind != "policy" {
        return Err(Error::Checkpoint(format!("{}: not a policy checkpoint", path.display())));
    }
    if header.cfg != policy.cfg {
        return Err(Error::Checkpoint(format!(
            "{}: policy shape mismatch (checkpoint {:?}, current {:?})",
            path.display(),
            header.cfg,
            policy.cfg
        )));
    }
    Ok(policy)
}
