//! Self-supervised backbone pretraining.
//!
//! The seq2seq backbone learns the whole closed vocabulary before any skill
//! supervision exists: it copies sentences, restores masked words, maps
//! synonym-substituted sentences back to their canonical form, and copies
//! separator-joined skill-sentence sequences. After this it is frozen; the
//! synonym mapping it absorbed here is what lets tuned prompts generalize to
//! instruction words they never saw.

use super::vocab::{Vocabulary, BOS, EOS, MASK_WORD, SEP_WORD};
use crate::corpus::{enumerate_tasks, rephrase, Instruction, RephraseMode, SubstitutionLexicon};
use crate::domain::{ActionLanguage, TaskId};
use crate::nn::adam::Adam;
use crate::nn::transformer::{Seq2Seq, TransformerConfig};
use crate::nn::{GradStore, Params};
use crate::{Error, Real, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub pairs: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { pairs: 4000, epochs: 6, batch: 8, lr: 1e-3, seed: 11 }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainReport {
    pub train_loss_per_token: f64,
    pub holdout_nll_per_token: f64,
}

/// Every canonical instruction sentence (templates expanded over their
/// target pools).
pub fn instruction_sentences() -> Vec<String> {
    let mut out = Vec::new();
    for spec in enumerate_tasks() {
        for (v, t) in spec.templates.iter().enumerate() {
            if t.contains("{obj}") {
                for &c in spec.target_pool {
                    out.push(Instruction::new(spec.id, Some(c), v).text);
                }
            } else {
                out.push(t.to_string());
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

fn mask_words<R: Rng>(text: &str, rng: &mut R) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let forced = rng.gen_range(0..words.len());
    words
        .iter()
        .enumerate()
        .map(|(i, w)| if i == forced || rng.gen_bool(0.25) { MASK_WORD } else { w })
        .collect::<Vec<_>>()
        .join(" ")
}

fn substituted(text: &str, mode: RephraseMode, lex: &SubstitutionLexicon) -> String {
    let inst = Instruction { text: text.to_string(), task: TaskId::OpenDrawer, target: None };
    rephrase(&inst, mode, lex).text
}

/// (source, target) text pairs for one pretraining corpus.
pub fn pretrain_pairs(n: usize, seed: u64) -> Vec<(String, String)> {
    let sentences = instruction_sentences();
    let skills: Vec<String> = ActionLanguage::closed_set().iter().map(|a| a.text()).collect();
    let lex = SubstitutionLexicon::default();
    let modes = [RephraseMode::Verb, RephraseMode::Noun, RephraseMode::Both];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        match rng.gen_range(0..6) {
            0 => {
                let s = sentences[rng.gen_range(0..sentences.len())].clone();
                out.push((s.clone(), s));
            }
            1 => {
                let s = &sentences[rng.gen_range(0..sentences.len())];
                out.push((mask_words(s, &mut rng), s.clone()));
            }
            2 => {
                let s = &sentences[rng.gen_range(0..sentences.len())];
                let mode = modes[rng.gen_range(0..modes.len())];
                out.push((substituted(s, mode, &lex), s.clone()));
            }
            3 => {
                let s = &sentences[rng.gen_range(0..sentences.len())];
                let mode = modes[rng.gen_range(0..modes.len())];
                let sub = substituted(s, mode, &lex);
                out.push((mask_words(&sub, &mut rng), sub));
            }
            4 => {
                let s = skills[rng.gen_range(0..skills.len())].clone();
                out.push((if rng.gen_bool(0.5) { mask_words(&s, &mut rng) } else { s.clone() }, s));
            }
            _ => {
                let k = rng.gen_range(2..=5);
                let seq: Vec<String> =
                    (0..k).map(|_| skills[rng.gen_range(0..skills.len())].clone()).collect();
                let joined = seq.join(&format!(" {SEP_WORD} "));
                out.push((joined.clone(), joined));
            }
        }
    }
    out
}

fn pair_loss(
    model: &Seq2Seq<Real>,
    vocab: &Vocabulary,
    src: &str,
    tgt: &str,
    grads: Option<&mut GradStore<Real>>,
) -> (f64, usize) {
    let src_ids = vocab.tokenize(src);
    let tgt_ids = vocab.tokenize(tgt);
    let x = model.embed_tokens(&src_ids);
    let (memory, enc_cache) = model.encode(&x);
    match grads {
        Some(g) => {
            let (loss, dmem) = model.sequence_nll(&memory, &tgt_ids, BOS, EOS, Some((g, true)));
            let dx = model.encode_backward(&enc_cache, &dmem.unwrap(), g, true);
            model.embed_tokens_backward(&src_ids, &dx, g);
            (loss as f64, tgt_ids.len() + 1)
        }
        None => {
            let (loss, _) = model.sequence_nll(&memory, &tgt_ids, BOS, EOS, None);
            (loss as f64, tgt_ids.len() + 1)
        }
    }
}

/// Trains a fresh backbone on the denoising/canonicalization corpus and
/// verifies held-out per-token NLL before handing it over to be frozen.
pub fn pretrain_backbone(
    vocab: &Vocabulary,
    cfg: &PretrainConfig,
) -> Result<(Seq2Seq<Real>, PretrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pairs = pretrain_pairs(cfg.pairs, cfg.seed ^ 0x5A5A);
    let n_hold = (pairs.len() / 20).max(1);
    let (hold, train) = pairs.split_at(n_hold);

    let mut model = Seq2Seq::<Real>::new(TransformerConfig::small(vocab.len()), &mut rng);
    let mut opt = Adam::new(cfg.lr);
    let total_steps = (cfg.epochs * train.len().div_ceil(cfg.batch)).max(1);
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut last = (0.0f64, 0usize);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        last = (0.0, 0);
        for chunk in order.chunks(cfg.batch) {
            let mut grads = GradStore::new();
            for &i in chunk {
                let (src, tgt) = &train[i];
                let (loss, toks) = pair_loss(&model, vocab, src, tgt, Some(&mut grads));
                last.0 += loss;
                last.1 += toks;
            }
            grads.scale(1.0 / chunk.len() as Real);
            let lr_scale = 1.0 - step as Real / total_steps as Real;
            opt.step(&grads, lr_scale.max(0.05), |f| model.visit_mut("", f));
            step += 1;
        }
    }

    let (mut hl, mut ht) = (0.0f64, 0usize);
    for (src, tgt) in hold {
        let (loss, toks) = pair_loss(&model, vocab, src, tgt, None);
        hl += loss;
        ht += toks;
    }
    let holdout = hl / ht as f64;
    if holdout > 0.5 {
        return Err(Error::Training(format!(
            "backbone pretraining failed: holdout NLL/token {holdout:.3}"
        )));
    }
    Ok((
        model,
        PretrainReport {
            train_loss_per_token: last.0 / last.1.max(1) as f64,
            holdout_nll_per_token: holdout,
        },
    ))
}
