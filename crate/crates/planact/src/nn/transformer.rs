//! Small pre-norm encoder/decoder transformer.
//!
//! The encoder input is supplied as embedding *rows* rather than token ids so
//! that callers can splice in non-token slots (soft prompts, a tactile
//! embedding, an image embedding). Positional embeddings are applied only to
//! real token slots, which keeps the pretraining and prompt-tuning input
//! distributions consistent.

use super::attention::{AttnCache, MultiHeadAttention};
use super::layers::{cross_entropy, relu, relu_backward, Embedding, LayerNorm, LayerNormCache, Linear};
use super::mat::Mat;
use super::{join, GradStore, Params};
use crate::scalar::Scalar;
use rand::Rng;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct TransformerConfig {
    pub vocab: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub max_pos: usize,
}

impl TransformerConfig {
    pub fn small(vocab: usize) -> Self {
        TransformerConfig { vocab, dim: 64, heads: 4, layers: 2, ff_dim: 128, max_pos: 96 }
    }
}

pub struct FeedForward<S> {
    pub lin1: Linear<S>,
    pub lin2: Linear<S>,
}

pub struct FfCache<S> {
    x: Mat<S>,
    h_pre: Mat<S>,
    h: Mat<S>,
}

impl<S: Scalar> FeedForward<S> {
    fn new<R: Rng>(dim: usize, ff_dim: usize, rng: &mut R) -> Self {
        FeedForward { lin1: Linear::new(dim, ff_dim, rng), lin2: Linear::new(ff_dim, dim, rng) }
    }

    fn forward(&self, x: &Mat<S>) -> (Mat<S>, FfCache<S>) {
        let h_pre = self.lin1.forward(x);
        let h = relu(&h_pre);
        let y = self.lin2.forward(&h);
        (y, FfCache { x: x.clone(), h_pre, h })
    }

    fn backward(
        &self,
        cache: &FfCache<S>,
        dy: &Mat<S>,
        name: &str,
        grads: &mut GradStore<S>,
        wgrads: bool,
    ) -> Mat<S> {
        let dh = self.lin2.backward(&cache.h, dy, &join(name, "lin2"), grads, wgrads);
        let dh_pre = relu_backward(&cache.h_pre, &dh);
        self.lin1.backward(&cache.x, &dh_pre, &join(name, "lin1"), grads, wgrads)
    }
}

impl<S: Scalar> Params<S> for FeedForward<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        self.lin1.visit(&join(prefix, "lin1"), f);
        self.lin2.visit(&join(prefix, "lin2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [S])) {
        self.lin1.visit_mut(&join(prefix, "lin1"), f);
        self.lin2.visit_mut(&join(prefix, "lin2"), f);
    }
}

pub struct EncoderLayer<S> {
    ln1: LayerNorm<S>,
    attn: MultiHeadAttention<S>,
    ln2: LayerNorm<S>,
    ff: FeedForward<S>,
}

pub struct EncoderLayerCache<S> {
    ln1: LayerNormCache<S>,
    attn: AttnCache<S>,
    ln2: LayerNormCache<S>,
    ff: FfCache<S>,
}

impl<S: Scalar> EncoderLayer<S> {
    fn forward(&self, x: &Mat<S>) -> (Mat<S>, EncoderLayerCache<S>) {
        let (n1, c1) = self.ln1.forward(x);
        let (a, ca) = self.attn.forward(&n1, &n1, false);
        let mut x1 = x.clone();
        x1.add_assign(&a);
        let (n2, c2) = self.ln2.forward(&x1);
        let (f, cf) = self.ff.forward(&n2);
        let mut y = x1;
        y.add_assign(&f);
        (y, EncoderLayerCache { ln1: c1, attn: ca, ln2: c2, ff: cf })
    }

    fn backward(
        &self,
        cache: &EncoderLayerCache<S>,
        dy: &Mat<S>,
        name: &str,
        grads: &mut GradStore<S>,
        wgrads: bool,
    ) -> Mat<S> {
        let df = self.ff.backward(&cache.ff, dy, &join(name, "ff"), grads, wgrads);
        let mut dx1 = dy.clone();
        dx1.add_assign(&self.ln2.backward(&cache.ln2, &df, &join(name, "ln2"), grads, wgrads));
        let (dq, dkv) = self.attn.backward(&cache.attn, &dx1, &join(name, "attn"), grads, wgrads);
        let mut dn1 = dq;
        dn1.add_assign(&dkv);
        let mut dx = dx1;
        dx.add_assign(&self.ln1.backward(&cache.ln1, &dn1, &join(name, "ln1"), grads, wgrads));
        dx
    }
}

impl<S: Scalar> Params<S> for EncoderLayer<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.ff.visit(&join(prefix, "ff"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [S])) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.ff.visit_mut(&join(prefix, "ff"), f);
    }
}

pub struct DecoderLayer<S> {
    ln1: LayerNorm<S>,
    self_attn: MultiHeadAttention<S>,
    ln2: LayerNorm<S>,
    cross_attn: MultiHeadAttention<S>,
    ln3: LayerNorm<S>,
    ff: FeedForward<S>,
}

pub struct DecoderLayerCache<S> {
    ln1: LayerNormCache<S>,
    self_attn: AttnCache<S>,
    ln2: LayerNormCache<S>,
    cross_attn: AttnCache<S>,
    ln3: LayerNormCache<S>,
    ff: FfCache<S>,
}

impl<S: Scalar> DecoderLayer<S> {
    fn forward(&self, x: &Mat<S>, memory: &Mat<S>) -> (Mat<S>, DecoderLayerCache<S>) {
        let (n1, c1) = self.ln1.forward(x);
        let (a, ca) = self.self_attn.forward(&n1, &n1, true);
        let mut x1 = x.clone();
        x1.add_assign(&a);
        let (n2, c2) = self.ln2.forward(&x1);
        let (cr, ccr) = self.cross_attn.forward(&n2, memory, false);
        let mut x2 = x1;
        x2.add_assign(&cr);
        let (n3, c3) = self.ln3.forward(&x2);
        let (f, cf) = self.ff.forward(&n3);
        let mut y = x2;
        y.add_assign(&f);
        (y, DecoderLayerCache { ln1: c1, self_attn: ca, ln2: c2, cross_attn: ccr, ln3: c3, ff: cf })
    }

    /// Returns (dx, dmemory).
    fn backward(
        &self,
        cache: &DecoderLayerCache<S>,
        dy: &Mat<S>,
        name: &str,
        grads: &mut GradStore<S>,
        wgrads: bool,
    ) -> (Mat<S>, Mat<S>) {
        let df = self.ff.backward(&cache.ff, dy, &join(name, "ff"), grads, wgrads);
        let mut dx2 = dy.clone();
        dx2.add_assign(&self.ln3.backward(&cache.ln3, &df, &join(name, "ln3"), grads, wgrads));
        let (dn2, dmem) =
            self.cross_attn.backward(&cache.cross_attn, &dx2, &join(name, "cross"), grads, wgrads);
        let mut dx1 = dx2;
        dx1.add_assign(&self.ln2.backward(&cache.ln2, &dn2, &join(name, "ln2"), grads, wgrads));
        let (dq, dkv) =
            self.self_attn.backward(&cache.self_attn, &dx1, &join(name, "self"), grads, wgrads);
        let mut dn1 = dq;
        dn1.add_assign(&dkv);
        let mut dx = dx1;
        dx.add_assign(&self.ln1.backward(&cache.ln1, &dn1, &join(name, "ln1"), grads, wgrads));
        (dx, dmem)
    }
}

impl<S: Scalar> Params<S> for DecoderLayer<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.self_attn.visit(&join(prefix, "self"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.cross_attn.visit(&join(prefix, "cross"), f);
        self.ln3.visit(&join(prefix, "ln3"), f);
        self.ff.visit(&join(prefix, "ff"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [S])) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.self_attn.visit_mut(&join(prefix, "self"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.cross_attn.visit_mut(&join(prefix, "cross"), f);
        self.ln3.visit_mut(&join(prefix, "ln3"), f);
        self.ff.visit_mut(&join(prefix, "ff"), f);
    }
}

/// Frozen-after-pretraining seq2seq backbone.
pub struct Seq2Seq<S> {
    pub cfg: TransformerConfig,
    pub emb: Embedding<S>,
    pub pos: Embedding<S>,
    pub enc_layers: Vec<EncoderLayer<S>>,
    pub enc_ln: LayerNorm<S>,
    pub dec_layers: Vec<DecoderLayer<S>>,
    pub dec_ln: LayerNorm<S>,
    pub out: Linear<S>,
}

pub struct EncCache<S> {
    layers: Vec<EncoderLayerCache<S>>,
    final_ln: LayerNormCache<S>,
}

pub struct DecCache<S> {
    in_ids: Vec<usize>,
    layers: Vec<DecoderLayerCache<S>>,
    final_ln: LayerNormCache<S>,
    hidden: Mat<S>,
    mem_rows: usize,
}

impl<S: Scalar> Seq2Seq<S> {
    pub fn new<R: Rng>(cfg: TransformerConfig, rng: &mut R) -> Self {
        Seq2Seq {
            emb: Embedding::new(cfg.vocab, cfg.dim, rng),
            pos: Embedding::new(cfg.max_pos, cfg.dim, rng),
            enc_layers: (0..cfg.layers)
                .map(|_| EncoderLayer {
                    ln1: LayerNorm::new(cfg.dim),
                    attn: MultiHeadAttention::new(cfg.dim, cfg.heads, rng),
                    ln2: LayerNorm::new(cfg.dim),
                    ff: FeedForward::new(cfg.dim, cfg.ff_dim, rng),
                })
                .collect(),
            enc_ln: LayerNorm::new(cfg.dim),
            dec_layers: (0..cfg.layers)
                .map(|_| DecoderLayer {
                    ln1: LayerNorm::new(cfg.dim),
                    self_attn: MultiHeadAttention::new(cfg.dim, cfg.heads, rng),
                    ln2: LayerNorm::new(cfg.dim),
                    cross_attn: MultiHeadAttention::new(cfg.dim, cfg.heads, rng),
                    ln3: LayerNorm::new(cfg.dim),
                    ff: FeedForward::new(cfg.dim, cfg.ff_dim, rng),
                })
                .collect(),
            dec_ln: LayerNorm::new(cfg.dim),
            out: Linear::new(cfg.dim, cfg.vocab, rng),
            cfg,
        }
    }

    /// Token embedding rows with positional embeddings added (positions 0..n).
    pub fn embed_tokens(&self, ids: &[usize]) -> Mat<S> {
        let mut x = self.emb.forward(ids);
        for i in 0..ids.len() {
            let p = self.pos.table.row(i);
            let row = x.row_mut(i);
            for j in 0..row.len() {
                row[j] += p[j];
            }
        }
        x
    }

    /// Gradient of [`Self::embed_tokens`] back into the embedding tables.
    pub fn embed_tokens_backward(&self, ids: &[usize], dx: &Mat<S>, grads: &mut GradStore<S>) {
        self.emb.backward(ids, dx, "emb", grads);
        let pos_ids: Vec<usize> = (0..ids.len()).collect();
        self.pos.backward(&pos_ids, dx, "pos", grads);
    }

    pub fn encode(&self, input_rows: &Mat<S>) -> (Mat<S>, EncCache<S>) {
        let mut x = input_rows.clone();
        let mut caches = Vec::with_capacity(self.enc_layers.len());
        for layer in &self.enc_layers {
            let (y, c) = layer.forward(&x);
            x = y;
            caches.push(c);
        }
        let (y, cf) = self.enc_ln.forward(&x);
        (y, EncCache { layers: caches, final_ln: cf })
    }

    pub fn encode_backward(
        &self,
        cache: &EncCache<S>,
        dmemory: &Mat<S>,
        grads: &mut GradStore<S>,
        wgrads: bool,
    ) -> Mat<S> {
        let mut dx = self.enc_ln.backward(&cache.final_ln, dmemory, "enc_ln", grads, wgrads);
        for (i, layer) in self.enc_layers.iter().enumerate().rev() {
            dx = layer.backward(&cache.layers[i], &dx, &format!("enc.{i}"), grads, wgrads);
        }
        dx
    }

    /// Teacher-forced decode: `in_ids` already starts with BOS.
    /// Returns logits (len(in_ids), vocab).
    pub fn decode(&self, memory: &Mat<S>, in_ids: &[usize]) -> (Mat<S>, DecCache<S>) {
        let mut x = self.embed_tokens(in_ids);
        let mut caches = Vec::with_capacity(self.dec_layers.len());
        for layer in &self.dec_layers {
            let (y, c) = layer.forward(&x, memory);
            x = y;
            caches.push(c);
        }
        let (hidden, cf) = self.dec_ln.forward(&x);
        let logits = self.out.forward(&hidden);
        (
            logits,
            DecCache {
                in_ids: in_ids.to_vec(),
                layers: caches,
                final_ln: cf,
                hidden,
                mem_rows: memory.rows,
            },
        )
    }

    /// Returns dmemory; decoder token-embedding gradients are accumulated when
    /// `wgrads` is set.
    pub fn decode_backward(
        &self,
        cache: &DecCache<S>,
        dlogits: &Mat<S>,
        grads: &mut GradStore<S>,
        wgrads: bool,
    ) -> Mat<S> {
        let dhidden = self.out.backward(&cache.hidden, dlogits, "out", grads, wgrads);
        let mut dx = self.dec_ln.backward(&cache.final_ln, &dhidden, "dec_ln", grads, wgrads);
        let mut dmem = Mat::zeros(cache.mem_rows, self.cfg.dim);
        for (i, layer) in self.dec_layers.iter().enumerate().rev() {
            let (dxl, dmeml) = layer.backward(&cache.layers[i], &dx, &format!("dec.{i}"), grads, wgrads);
            dx = dxl;
            dmem.add_assign(&dmeml);
        }
        if wgrads {
            self.embed_tokens_backward(&cache.in_ids, &dx, grads);
        }
        dmem
    }

    /// Teacher-forced sequence loss: -sum_i log P(target_i | target_<i, memory).
    /// Returns (loss, dmemory-producing closure inputs). Gradients for the
    /// decoder weights are accumulated only when `wgrads` is set.
    pub fn sequence_nll(
        &self,
        memory: &Mat<S>,
        target_ids: &[usize],
        bos: usize,
        eos: usize,
        grads: Option<(&mut GradStore<S>, bool)>,
    ) -> (S, Option<Mat<S>>) {
        let mut in_ids = Vec::with_capacity(target_ids.len() + 1);
        in_ids.push(bos);
        in_ids.extend_from_slice(target_ids);
        let mut out_ids = target_ids.to_vec();
        out_ids.push(eos);
        let (logits, cache) = self.decode(memory, &in_ids);
        let (loss, dlogits) = cross_entropy(&logits, &out_ids);
        match grads {
            Some((g, wgrads)) => {
                let dmem = self.decode_backward(&cache, &dlogits, g, wgrads);
                (loss, Some(dmem))
            }
            None => (loss, None),
        }
    }

    /// Greedy autoregressive decode until EOS or `max_len` tokens.
    pub fn greedy_decode(&self, memory: &Mat<S>, bos: usize, eos: usize, max_len: usize) -> Vec<usize> {
        let mut ids = vec![bos];
        let mut out = Vec::new();
        for _ in 0..max_len {
            let (logits, _) = self.decode(memory, &ids);
            let last = logits.row(logits.rows - 1);
            let mut best = 0;
            let mut best_v = S::neg_infinity();
            for (j, &v) in last.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            if best == eos {
                break;
            }
            out.push(best);
            ids.push(best);
        }
        out
    }
}

impl<S: Scalar> Params<S> for Seq2Seq<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        self.emb.visit(&join(prefix, "emb"), f);
        self.pos.visit(&join(prefix, "pos"), f);
        for (i, l) in self.enc_layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("enc.{i}")), f);
        }
        self.enc_ln.visit(&join(prefix, "enc_ln"), f);
        for (i, l) in self.dec_layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("dec.{i}")), f);
        }
        self.dec_ln.visit(&join(prefix, "dec_ln"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [S])) {
        self.emb.visit_mut(&join(prefix, "emb"), f);
        self.pos.visit_mut(&join(prefix, "pos"), f);
        for (i, l) in self.enc_layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("enc.{i}")), f);
        }
        self.enc_ln.visit_mut(&join(prefix, "enc_ln"), f);
        for (i, l) in self.dec_layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("dec.{i}")), f);
        }
        self.dec_ln.visit_mut(&join(prefix, "dec_ln"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> TransformerConfig {
        TransformerConfig { vocab: 11, dim: 8, heads: 2, layers: 1, ff_dim: 16, max_pos: 12 }
    }

    fn nll(model: &Seq2Seq<f64>, src: &[usize], tgt: &[usize]) -> f64 {
        let x = model.embed_tokens(src);
        let (memory, _) = model.encode(&x);
        let (loss, _) = model.sequence_nll(&memory, tgt, 1, 2, None);
        loss
    }

    #[test]
    fn seq2seq_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = Seq2Seq::<f64>::new(tiny(), &mut rng);
        let src = [3usize, 5, 7, 4];
        let tgt = [6usize, 8, 9];

        let mut grads = GradStore::new();
        let x = model.embed_tokens(&src);
        let (memory, enc_cache) = model.encode(&x);
        let (_, dmem) = model.sequence_nll(&memory, &tgt, 1, 2, Some((&mut grads, true)));
        let dx = model.encode_backward(&enc_cache, &dmem.unwrap(), &mut grads, true);
        model.embed_tokens_backward(&src, &dx, &mut grads);
        // Vocabulary rows that never appear in src/tgt/bos/eos get zero
        // gradient; the checker requires an entry for every parameter.
        grads.acc("emb", 11 * 8);
        grads.acc("pos", 12 * 8);

        let report = finite_diff_check(
            &mut model,
            &grads,
            1e-5,
            1e-6,
            |m| nll(m, &src, &tgt),
            |m, f| m.visit_mut("", f),
        );
        assert!(report.checked > 1000);
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_param
        );
    }

    #[test]
    fn frozen_backward_touches_no_weight_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = Seq2Seq::<f64>::new(tiny(), &mut rng);
        let src = [3usize, 5];
        let tgt = [6usize];
        let mut grads = GradStore::new();
        let x = model.embed_tokens(&src);
        let (memory, enc_cache) = model.encode(&x);
        let (_, dmem) = model.sequence_nll(&memory, &tgt, 1, 2, Some((&mut grads, false)));
        model.encode_backward(&enc_cache, &dmem.unwrap(), &mut grads, false);
        let mut names = Vec::new();
        model.visit("", &mut |n, _| names.push(n.to_string()));
        for n in names {
            assert!(grads.get(&n).is_none(), "unexpected weight grad for {n}");
        }
    }

    #[test]
    fn greedy_decode_reproduces_overfit_target() {
        // Sanity: a model memorizes one (src, tgt) pair with a few Adam steps,
        // then greedy decode reproduces the target exactly.
        use crate::nn::adam::Adam;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = Seq2Seq::<f64>::new(tiny(), &mut rng);
        let src = [3usize, 5, 7];
        let tgt = [6usize, 4];
        let mut opt = Adam::new(1e-2);
        for _ in 0..150 {
            let mut grads = GradStore::new();
            let x = model.embed_tokens(&src);
            let (memory, enc_cache) = model.encode(&x);
            let (_, dmem) = model.sequence_nll(&memory, &tgt, 1, 2, Some((&mut grads, true)));
            let dx = model.encode_backward(&enc_cache, &dmem.unwrap(), &mut grads, true);
            model.embed_tokens_backward(&src, &dx, &mut grads);
            opt.step(&grads, 1.0, |f| model.visit_mut("", f));
        }
        let x = model.embed_tokens(&src);
        let (memory, _) = model.encode(&x);
        assert_eq!(model.greedy_decode(&memory, 1, 2, 8), tgt.to_vec());
    }
}
