//! Prompt-tuned planner over the frozen backbone.
//!
//! The encoder input is a spliced row sequence: K reparameterized soft
//! prompts, the instruction tokens (the only slots that receive positional
//! embeddings), one tactile embedding row and one adapted image-feature row.
//! Only the prompt stack, the tactile rows and the image adapter receive
//! gradients; the backbone and the image encoder stay bit-identical through
//! tuning.

use super::image::ImageEncoder;
use super::vocab::{Vocabulary, BOS, EOS, SEP};
use crate::domain::ActionLanguage;
use crate::nn::layers::{relu, relu_backward, Linear};
use crate::nn::mat::Mat;
use crate::nn::transformer::Seq2Seq;
use crate::nn::{join, GradStore, Params};
use crate::scalar::Scalar;
use crate::{Error, Real, Result};
use rand::Rng;
use std::path::Path;

pub const NUM_PROMPTS: usize = 10;

/// Decoded skill sentences never exceed this many tokens.
pub const MAX_SKILL_TOKENS: usize = 12;

/// Upper bound for a whole separator-joined plan decode.
pub const MAX_PLAN_TOKENS: usize = 80;

/// One planner observation: what the robot can actually see and feel.
#[derive(Clone, Debug)]
pub struct CoarseState {
    pub instruction: String,
    pub depth: Vec<f32>,
    pub tactile: u8,
}

/// The tunable parameters: prompt seeds with a two-layer feed-forward
/// reparameterization, the two tactile embedding rows, and the image adapter.
pub struct SoftPromptParams<S> {
    pub seeds: Mat<S>, // (NUM_PROMPTS, dim)
    pub ff1: Linear<S>,
    pub ff2: Linear<S>,
    pub t_emb: Mat<S>, // (2, dim)
    pub adapter: Linear<S>,
}

impl<S: Scalar> SoftPromptParams<S> {
    pub fn new<R: Rng>(dim: usize, rng: &mut R) -> Self {
        SoftPromptParams {
            seeds: Mat::uniform(NUM_PROMPTS, dim, 0.5, rng),
            ff1: Linear::new(dim, dim, rng),
            ff2: Linear::new(dim, dim, rng),
            t_emb: Mat::uniform(2, dim, 0.5, rng),
            adapter: Linear::new(dim, dim, rng),
        }
    }

    fn prompts(&self) -> (Mat<S>, PromptCache<S>) {
        let h_pre = self.ff1.forward(&self.seeds);
        let h = relu(&h_pre);
        let p = self.ff2.forward(&h);
        (p, PromptCache { h_pre, h })
    }

    fn prompts_backward(&self, cache: &PromptCache<S>, dp: &Mat<S>, grads: &mut GradStore<S>) {
        let dh = self.ff2.backward(&cache.h, dp, "ff2", grads, true);
        let dh_pre = relu_backward(&cache.h_pre, &dh);
        let dseeds = self.ff1.backward(&self.seeds, &dh_pre, "ff1", grads, true);
        let g = grads.acc("seeds", self.seeds.data.len());
        for (a, b) in g.iter_mut().zip(&dseeds.data) {
            *a += *b;
        }
    }
}

impl<S: Scalar> Params<S> for SoftPromptParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        f(&join(prefix, "seeds"), &self.seeds.data);
        self.ff1.visit(&join(prefix, "ff1"), f);
        self.ff2.visit(&join(prefix, "ff2"), f);
        f(&join(prefix, "t_emb"), &self.t_emb.data);
        self.adapter.visit(&join(prefix, "adapter"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [S])) {
        f(&join(prefix, "seeds"), &mut self.seeds.data);
        self.ff1.visit_mut(&join(prefix, "ff1"), f);
        self.ff2.visit_mut(&join(prefix, "ff2"), f);
        f(&join(prefix, "t_emb"), &mut self.t_emb.data);
        self.adapter.visit_mut(&join(prefix, "adapter"), f);
    }
}

struct PromptCache<S> {
    h_pre: Mat<S>,
    h: Mat<S>,
}

pub struct CoarseModel<S> {
    pub vocab: Vocabulary,
    pub backbone: Seq2Seq<S>,
    pub image: ImageEncoder<S>,
    pub tune: SoftPromptParams<S>,
}

/// A tuning example with all frozen computation done once up front.
#[derive(Clone, Debug)]
pub struct PreparedExample<S> {
    pub src_ids: Vec<usize>,
    pub feat: Vec<S>,
    pub tactile: u8,
    pub label_ids: Vec<usize>,
    pub label_text: String,
}

struct EncodeCtx<S> {
    enc_cache: crate::nn::transformer::EncCache<S>,
    prompt_cache: PromptCache<S>,
    n_tokens: usize,
    feat: Vec<S>,
}

impl<S: Scalar> CoarseModel<S> {
    pub fn dim(&self) -> usize {
        self.backbone.cfg.dim
    }

    pub fn prepare(&self, state: &CoarseState, label_text: &str) -> PreparedExample<S> {
        PreparedExample {
            src_ids: self.vocab.tokenize(&state.instruction),
            feat: self.image.encode(&state.depth),
            tactile: state.tactile,
            label_ids: self.vocab.tokenize(label_text),
            label_text: label_text.to_string(),
        }
    }

    fn encode_prepared(
        &self,
        src_ids: &[usize],
        feat: &[S],
        tactile: u8,
    ) -> (Mat<S>, EncodeCtx<S>) {
        let dim = self.dim();
        let (prompts, prompt_cache) = self.tune.prompts();
        let tokens = self.backbone.embed_tokens(src_ids);
        let fm = Mat { rows: 1, cols: dim, data: feat.to_vec() };
        let img_row = self.tune.adapter.forward(&fm);
        let n = NUM_PROMPTS + src_ids.len() + 2;
        let mut x = Mat::zeros(n, dim);
        for i in 0..NUM_PROMPTS {
            x.row_mut(i).copy_from_slice(prompts.row(i));
        }
        for i in 0..src_ids.len() {
            x.row_mut(NUM_PROMPTS + i).copy_from_slice(tokens.row(i));
        }
        x.row_mut(n - 2).copy_from_slice(self.tune.t_emb.row(tactile as usize));
        x.row_mut(n - 1).copy_from_slice(img_row.row(0));
        let (memory, enc_cache) = self.backbone.encode(&x);
        (memory, EncodeCtx { enc_cache, prompt_cache, n_tokens: src_ids.len(), feat: feat.to_vec() })
    }

    pub fn memory_for(&self, state: &CoarseState) -> Mat<S> {
        let src_ids = self.vocab.tokenize(&state.instruction);
        let feat = self.image.encode(&state.depth);
        self.encode_prepared(&src_ids, &feat, state.tactile).0
    }

    /// Encoder memory from precomputed pieces (tuning-loop fast path).
    pub fn memory_from_parts(&self, src_ids: &[usize], feat: &[S], tactile: u8) -> Mat<S> {
        self.encode_prepared(src_ids, feat, tactile).0
    }

    /// Teacher-forced NLL of the label sequence with gradients routed only
    /// into the tunable parameters (unprefixed names matching
    /// `self.tune.visit("")`).
    pub fn example_loss(&self, ex: &PreparedExample<S>, grads: Option<&mut GradStore<S>>) -> S {
        let (memory, ctx) = self.encode_prepared(&ex.src_ids, &ex.feat, ex.tactile);
        match grads {
            None => self.backbone.sequence_nll(&memory, &ex.label_ids, BOS, EOS, None).0,
            Some(g) => {
                let (loss, dmem) =
                    self.backbone.sequence_nll(&memory, &ex.label_ids, BOS, EOS, Some((g, false)));
                let dx = self.backbone.encode_backward(&ctx.enc_cache, &dmem.unwrap(), g, false);
                self.route_input_grads(&ctx, &dx, ex.tactile, g);
                loss
            }
        }
    }

    fn route_input_grads(
        &self,
        ctx: &EncodeCtx<S>,
        dx: &Mat<S>,
        tactile: u8,
        grads: &mut GradStore<S>,
    ) {
        let dim = self.dim();
        let mut dp = Mat::zeros(NUM_PROMPTS, dim);
        for i in 0..NUM_PROMPTS {
            dp.row_mut(i).copy_from_slice(dx.row(i));
        }
        self.tune.prompts_backward(&ctx.prompt_cache, &dp, grads);
        // Token rows feed the frozen embedding table: gradient discarded.
        let n = NUM_PROMPTS + ctx.n_tokens + 2;
        {
            let dt = grads.acc("t_emb", 2 * dim);
            let row = dx.row(n - 2);
            let base = tactile as usize * dim;
            for j in 0..dim {
                dt[base + j] += row[j];
            }
        }
        let fm = Mat { rows: 1, cols: dim, data: ctx.feat.clone() };
        let drow = Mat { rows: 1, cols: dim, data: dx.row(n - 1).to_vec() };
        // The adapter input is the frozen image feature: its dx is discarded.
        self.tune.adapter.backward(&fm, &drow, "adapter", grads, true);
    }

    /// Greedy decode of the next skill. Returns the raw decoded text and its
    /// exact-match snap onto the closed set (`None` = invalid decode).
    pub fn infer(&self, state: &CoarseState) -> (String, Option<ActionLanguage>) {
        let memory = self.memory_for(state);
        let ids = self.backbone.greedy_decode(&memory, BOS, EOS, MAX_SKILL_TOKENS);
        let text = self.vocab.detokenize(&ids);
        let snapped = ActionLanguage::parse(&text);
        (text, snapped)
    }

    /// Greedy decode of a whole separator-joined plan from one observation.
    /// `None` when any segment falls outside the closed set.
    pub fn infer_plan(&self, state: &CoarseState) -> (String, Option<Vec<ActionLanguage>>) {
        let memory = self.memory_for(state);
        let ids = self.backbone.greedy_decode(&memory, BOS, EOS, MAX_PLAN_TOKENS);
        let text = self.vocab.detokenize(&ids);
        let mut plan = Vec::new();
        for seg in ids.split(|&id| id == SEP) {
            let seg_text = self.vocab.detokenize(seg);
            match ActionLanguage::parse(&seg_text) {
                Some(al) => plan.push(al),
                None => return (text, None),
            }
        }
        (text, Some(plan))
    }

    /// Frozen language embedding of a skill sentence: the mean of its token
    /// embedding rows. This is the goal vector handed to the fine policy.
    pub fn skill_embedding(&self, skill: &ActionLanguage) -> Vec<S> {
        let ids = self.vocab.tokenize(&skill.text());
        let dim = self.dim();
        let mut out = vec![S::zero(); dim];
        for &id in &ids {
            for (o, &v) in out.iter_mut().zip(self.backbone.emb.table.row(id)) {
                *o += v;
            }
        }
        let n = S::from_usize(ids.len().max(1));
        for o in out.iter_mut() {
            *o /= n;
        }
        out
    }

    /// Checksums of the parts that must never change during tuning.
    pub fn frozen_checksums(&self) -> (u64, u64) {
        (self.backbone.checksum(), self.image.checksum())
    }
}

impl<S: Scalar> Params<S> for CoarseModel<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.image.visit(&join(prefix, "image"), f);
        self.tune.visit(&join(prefix, "tune"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [S])) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        self.image.visit_mut(&join(prefix, "image"), f);
        self.tune.visit_mut(&join(prefix, "tune"), f);
    }
}

#[derive(serde::Serialize, serde::Deserialize, Debug, Clone, PartialEq)]
pub struct CoarseHeader {
    pub kind: String,
    pub vocab_hash: u64,
    pub dim: usize,
    pub seed: u64,
}

pub fn save_coarse(path: &Path, model: &CoarseModel<Real>, seed: u64) -> Result<()> {
    let header = CoarseHeader {
        kind: "coarse".into(),
        vocab_hash: model.vocab.hash(),
        dim: model.dim(),
        seed,
    };
    crate::nn::checkpoint::save(path, &header, model)
}

/// A randomly initialized full-size model (pretraining/tuning fill it in;
/// checkpoint loading overwrites it).
pub fn untrained(seed: u64) -> CoarseModel<Real> {
    use crate::nn::transformer::TransformerConfig;
    use rand::SeedableRng;
    let vocab = Vocabulary::build();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    CoarseModel {
        backbone: Seq2Seq::new(TransformerConfig::small(vocab.len()), &mut rng),
        image: ImageEncoder::new(64, &mut rng),
        tune: SoftPromptParams::new(64, &mut rng),
        vocab,
    }
}

pub fn load_coarse(path: &Path) -> Result<CoarseModel<Real>> {
    let mut model = untrained(0);
    let header: CoarseHeader = crate::nn::checkpoint::load(path, &mut model)?;
    if header.kind != "coarse" {
        return Err(Error::Checkpoint(format!("{}: not a planner checkpoint", path.display())));
    }
    if header.vocab_hash != model.vocab.hash() {
        return Err(Error::Checkpoint(format!(
            "{}: vocabulary hash mismatch (checkpoint {:x}, current {:x})",
            path.display(),
            header.vocab_hash,
            model.vocab.hash()
        )));
    }
    Ok(model)
}
