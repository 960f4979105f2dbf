//! Prompt tuning on oracle-labelled records.

use super::model::{CoarseModel, CoarseState, PreparedExample};
use crate::corpus::dataset::MAX_PLAN_STEPS;
use crate::corpus::{run_oracle_plan, scenario_for, DatasetRecord, Instruction};
use crate::domain::ALL_TASKS;
use crate::nn::adam::Adam;
use crate::nn::{GradStore, Params};
use crate::sim::{render_depth, reset_scenario, CameraModel, CameraNoise};
use crate::{Error, Real, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub holdout_every: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig { epochs: 10, lr: 1e-3, batch: 8, seed: 13, holdout_every: 20 }
    }
}

#[derive(Clone, Debug)]
pub struct TuneReport {
    pub train_loss: Vec<f64>,
    pub holdout_accuracy: f64,
    pub examples: usize,
}

/// One (state, target text) supervision pair.
#[derive(Clone, Debug)]
pub struct TuneExample {
    pub state: CoarseState,
    pub label: String,
}

pub fn examples_from_records(records: &[DatasetRecord]) -> Vec<TuneExample> {
    records
        .iter()
        .map(|r| TuneExample {
            state: CoarseState {
                instruction: r.instruction.text.clone(),
                depth: r.depth.clone(),
                tactile: r.tactile,
            },
            label: r.label.text(),
        })
        .collect()
}

/// Whole-plan supervision from initial states only, for the open-loop
/// ablation: the label is the full oracle plan joined with the separator.
pub fn plan_examples(n_per_task: usize, seed: u64) -> Result<Vec<TuneExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = CameraNoise::default();
    let mut out = Vec::new();
    for &task in &ALL_TASKS {
        for _ in 0..n_per_task {
            let episode_seed: u64 = rng.gen();
            let mut ep_rng = ChaCha8Rng::seed_from_u64(episode_seed);
            let inst = Instruction::sample(task, &mut ep_rng);
            let cfg = scenario_for(task, inst.target);
            let w = reset_scenario(&cfg, ep_rng.gen())?;
            let (plan, _, ok) = run_oracle_plan(&w, &inst, MAX_PLAN_STEPS)?;
            if !ok {
                return Err(Error::Oracle(format!("plan generation failed for {}", task.name())));
            }
            let label =
                plan.iter().map(|s| s.text()).collect::<Vec<_>>().join(&format!(" {} ", super::vocab::SEP_WORD));
            let cam = CameraModel::sample(&noise, &mut ep_rng);
            out.push(TuneExample {
                state: CoarseState {
                    instruction: inst.text.clone(),
                    depth: render_depth(&w, &cam).data,
                    tactile: w.tactile(),
                },
                label,
            });
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Tunes prompts/tactile/adapter on `examples`; the backbone and image
/// encoder are asserted bit-identical before and after. Every
/// `holdout_every`-th example is held out and scored by exact greedy-decode
/// match.
pub fn tune_prompts(
    model: &mut CoarseModel<Real>,
    examples: &[TuneExample],
    cfg: &TuneConfig,
) -> Result<TuneReport> {
    if examples.is_empty() {
        return Err(Error::Training("no tuning examples".into()));
    }
    let frozen = model.frozen_checksums();
    let prepared: Vec<PreparedExample<Real>> =
        examples.iter().map(|e| model.prepare(&e.state, &e.label)).collect();
    let (mut train, mut hold) = (Vec::new(), Vec::new());
    for (i, p) in prepared.into_iter().enumerate() {
        if i % cfg.holdout_every == 0 {
            hold.push(p);
        } else {
            train.push(p);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let total_steps = (cfg.epochs * train.len().div_ceil(cfg.batch)).max(1);
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch) {
            let mut grads = GradStore::new();
            for &i in chunk {
                epoch_loss += model.example_loss(&train[i], Some(&mut grads)) as f64;
            }
            grads.scale(1.0 / chunk.len() as Real);
            let lr_scale = (1.0 - step as Real / total_steps as Real).max(0.02);
            opt.step(&grads, lr_scale, |f| model.tune.visit_mut("", f));
            step += 1;
        }
        train_loss.push(epoch_loss / train.len() as f64);
    }

    if model.frozen_checksums() != frozen {
        return Err(Error::Training("frozen parameters changed during tuning".into()));
    }

    let mut correct = 0usize;
    for p in &hold {
        if decode_prepared(model, p) == p.label_text {
            correct += 1;
        }
    }
    Ok(TuneReport {
        train_loss,
        holdout_accuracy: correct as f64 / hold.len().max(1) as f64,
        examples: examples.len(),
    })
}

/// Greedy decode for an already-prepared example (frozen image feature
/// reused).
pub fn decode_prepared(model: &CoarseModel<Real>, p: &PreparedExample<Real>) -> String {
    let max_len = if p.label_ids.contains(&super::vocab::SEP) {
        super::model::MAX_PLAN_TOKENS
    } else {
        super::model::MAX_SKILL_TOKENS
    };
    let memory = model.memory_from_parts(&p.src_ids, &p.feat, p.tactile);
    let ids = model.backbone.greedy_decode(&memory, super::vocab::BOS, super::vocab::EOS, max_len);
    model.vocab.detokenize(&ids)
}
