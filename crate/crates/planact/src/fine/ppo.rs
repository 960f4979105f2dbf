//! Skill-level reinforcement learning: uniform procedural skill generation,
//! deterministic rollout workers, distance-shaped rewards and clipped-PPO
//! updates.

use super::policy::{skill_ready, FineState, HeadGrads, PolicyNet, SkillEmbeddings, H_SKILL};
use crate::corpus::oracle::{BIN_DROP, DRAWER_DROP};
use crate::domain::{ActionLanguage, Category, Goal, Shape};
use crate::nn::adam::Adam;
use crate::nn::{GradStore, Params};
use crate::scalar::Scalar;
use crate::sim::{
    check_predicate, near_drawer, render_depth, reset_scenario, CameraModel, CameraNoise,
    ConcreteAction, HoldAtStart, SceneTemplate, ScenarioConfig, WorldState, GRID_H, GRID_W, HOME,
};
use crate::{Error, Real, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub workers: usize,
    /// Episodes each worker collects per parameter snapshot.
    pub sync_interval: usize,
    /// Number of collect/update rounds.
    pub updates: usize,
    /// Optimization epochs over each collected batch.
    pub epochs: usize,
    /// Minibatch size in transitions.
    pub minibatch: usize,
    pub lr: f64,
    pub clip: f64,
    pub gamma: f64,
    pub lam: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub horizon: usize,
    /// Weight of the distance-shaping reward relative to terminal success.
    pub shaping_weight: f64,
    /// Shaping applied every step (true) or only at episode end (false).
    pub shaping_per_step: bool,
    /// Restrict procedural generation to these skills (None: the whole
    /// executable closed set).
    pub skills: Option<Vec<ActionLanguage>>,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            workers: 32,
            sync_interval: 8,
            updates: 600,
            epochs: 4,
            minibatch: 64,
            lr: 1e-4,
            clip: 0.2,
            gamma: 0.99,
            lam: 0.95,
            vf_coef: 0.5,
            ent_coef: 0.01,
            horizon: H_SKILL,
            shaping_weight: 0.1,
            shaping_per_step: true,
            skills: None,
            seed: 17,
        }
    }
}

/// Every skill a policy can be asked to execute ("Done" is a planner
/// terminal).
pub fn executable_skills() -> Vec<ActionLanguage> {
    ActionLanguage::closed_set().into_iter().filter(|s| !s.is_terminal()).collect()
}

/// A start world in which `skill` is applicable and not yet satisfied.
pub fn skill_scenario(skill: &ActionLanguage, seed: u64) -> Result<WorldState> {
    use ActionLanguage as A;
    let round = [Category::Apple, Category::RoundObject, Category::Can];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = match skill {
        A::OpenDrawer | A::CloseDrawer => ScenarioConfig::new(SceneTemplate::DrawerOnly),
        A::GraspThe(c) => {
            let mut cfg = ScenarioConfig::new(SceneTemplate::SingleTarget);
            cfg.target = Some(*c);
            cfg
        }
        A::GraspAnObject => ScenarioConfig::new(SceneTemplate::SingleTarget),
        A::GraspRound => ScenarioConfig::new(SceneTemplate::RoundMix),
        A::GraspNearDrawer => ScenarioConfig::new(SceneTemplate::NearDrawer),
        A::PickKnife | A::CutWithKnife => ScenarioConfig::new(SceneTemplate::KnifeTarget),
        A::PutIntoDrawer(c) => {
            let mut cfg = ScenarioConfig::new(SceneTemplate::SingleTarget);
            cfg.target = Some(*c);
            cfg.hold_at_start = Some(HoldAtStart::Target);
            cfg.drawer_open = Some(true);
            cfg
        }
        A::PutIntoBin => {
            let mut cfg = ScenarioConfig::new(SceneTemplate::SingleTarget);
            cfg.hold_at_start = Some(HoldAtStart::Target);
            cfg
        }
        A::PutRoundInBin | A::PlaceRound => {
            let mut cfg = ScenarioConfig::new(SceneTemplate::SingleTarget);
            cfg.target = Some(round[rng.gen_range(0..round.len())]);
            cfg.hold_at_start = Some(HoldAtStart::Target);
            cfg
        }
        A::Done => return Err(Error::Config("'Done' names no motor skill".into())),
    };
    match skill {
        A::OpenDrawer => cfg.drawer_open = Some(false),
        A::CloseDrawer => cfg.drawer_open = Some(true),
        A::CutWithKnife => cfg.hold_at_start = Some(HoldAtStart::Knife),
        _ => {}
    }
    reset_scenario(&cfg, rng.gen())
}

/// The cell the shaping reward pulls the gripper toward.
pub fn target_cell(w: &WorldState, skill: &ActionLanguage) -> Option<(usize, usize)> {
    use ActionLanguage as A;
    let first = |pred: &dyn Fn(&crate::sim::ObjectInstance) -> bool| {
        w.objects
            .iter()
            .find(|o| {
                o.on_table()
                    && pred(o)
                    && !matches!(w.held, Some(crate::sim::Held::Object(id)) if id == o.id)
            })
            .map(|o| o.cell)
    };
    match skill {
        A::Done => None,
        A::OpenDrawer | A::CloseDrawer => Some(w.handle_cell()),
        A::GraspThe(c) => Some(first(&|o| o.category == *c).unwrap_or(HOME)),
        A::GraspAnObject => Some(first(&|_| true).unwrap_or(HOME)),
        A::GraspRound => Some(first(&|o| o.shape() == Shape::Round).unwrap_or(HOME)),
        A::GraspNearDrawer => Some(first(&|o| near_drawer(o.cell)).unwrap_or(HOME)),
        A::PickKnife => Some(first(&|o| o.category == Category::Knife).unwrap_or(HOME)),
        A::CutWithKnife => Some(first(&|o| o.category.is_cuttable() && !o.cut).unwrap_or(HOME)),
        A::PutIntoDrawer(_) => Some(DRAWER_DROP),
        A::PutIntoBin | A::PutRoundInBin => Some(BIN_DROP),
        A::PlaceRound => Some(HOME),
    }
}

fn chebyshev(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dr = a.0.abs_diff(b.0);
    let dc = a.1.abs_diff(b.1);
    dr.max(dc) as f64
}

/// Distance shaping in [0, 1]: 1 on the target cell, 0 at the far corner.
pub fn r_au(w: &WorldState, target: (usize, usize)) -> f64 {
    let d_max = (GRID_H.max(GRID_W) - 1) as f64;
    1.0 - chebyshev(w.gripper.cell, target) / d_max
}

/// Rewards for one episode from the start world and the worlds after each
/// action. The shaping target is fixed from the start world (afterwards a
/// grasped object no longer sits on the table); the last entry carries the
/// terminal success bit, and shaping is added per step or terminally
/// depending on `per_step`.
pub fn compute_rewards(
    start: &WorldState,
    worlds: &[WorldState],
    goal: &ActionLanguage,
    weight: f64,
    per_step: bool,
) -> Result<Vec<f64>> {
    if worlds.is_empty() {
        return Err(Error::Config("empty episode".into()));
    }
    let target = target_cell(start, goal)
        .ok_or_else(|| Error::Config(format!("skill '{}' has no target cell", goal.text())))?;
    let mut rewards: Vec<f64> = if per_step {
        worlds.iter().map(|w| weight * r_au(w, target)).collect()
    } else {
        let mut r = vec![0.0; worlds.len()];
        *r.last_mut().unwrap() = weight * r_au(worlds.last().unwrap(), target);
        r
    };
    let done = check_predicate(worlds.last().unwrap(), &Goal::Skill(*goal))?;
    if done {
        *rewards.last_mut().unwrap() += 1.0;
    }
    Ok(rewards)
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub tactile: u8,
    pub action: ConcreteAction,
    pub logp: f64,
    pub value: f64,
    pub reward: f64,
}

/// One worker episode under a fixed parameter snapshot.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub worker: usize,
    pub skill: ActionLanguage,
    /// Depth frame rendered once at skill start.
    pub depth: Vec<Real>,
    pub goal: Vec<Real>,
    pub transitions: Vec<Transition>,
    pub success: bool,
}

fn run_episode(
    policy: &PolicyNet<Real>,
    emb: &SkillEmbeddings,
    skill: ActionLanguage,
    cfg: &PpoConfig,
    worker: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    let noise = CameraNoise::default();
    let start = skill_ready(&skill_scenario(&skill, rng.gen())?);
    let mut w = start.clone();
    let cam = CameraModel::sample(&noise, rng);
    let depth: Vec<Real> = render_depth(&w, &cam).data;
    let le = emb.get(&skill)?;
    let goal_pred = Goal::Skill(skill);
    let mut transitions = Vec::new();
    let mut worlds = Vec::new();
    for _ in 0..cfg.horizon {
        if check_predicate(&w, &goal_pred)? {
            break;
        }
        let tactile = w.tactile();
        let s = FineState::new(&depth, le, tactile);
        let (dist, value, _) = policy.forward(&s);
        let a = dist.sample(rng);
        let logp = dist.log_prob(&a) as f64;
        let (next, _, _) = crate::sim::apply_action(&w, &a);
        w = next;
        worlds.push(w.clone());
        transitions.push(Transition {
            tactile,
            action: a,
            logp,
            value: value as f64,
            reward: 0.0,
        });
    }
    if !transitions.is_empty() {
        let rewards =
            compute_rewards(&start, &worlds, &skill, cfg.shaping_weight, cfg.shaping_per_step)?;
        for (t, r) in transitions.iter_mut().zip(rewards) {
            t.reward = r;
        }
    }
    Ok(Rollout {
        worker,
        skill,
        depth,
        goal: le.to_vec(),
        transitions,
        success: check_predicate(&w, &goal_pred)?,
    })
}

/// Runs every worker for `cfg.sync_interval` episodes against the given
/// parameter snapshot. Each worker's stream depends only on its own seed, so
/// per-worker results are identical to running that worker alone; output is
/// ordered by worker id. Skills are drawn uniformly.
pub fn collect_rollouts(
    policy: &PolicyNet<Real>,
    emb: &SkillEmbeddings,
    worker_seeds: &[u64],
    cfg: &PpoConfig,
) -> Result<Vec<Rollout>> {
    let skills = cfg.skills.clone().unwrap_or_else(executable_skills);
    let weights = vec![1.0; skills.len()];
    collect_rollouts_weighted(policy, emb, worker_seeds, &skills, &weights, cfg)
}

/// [`collect_rollouts`] with explicit per-skill sampling weights (the
/// training loop focuses rollouts on skills that still fail).
pub fn collect_rollouts_weighted(
    policy: &PolicyNet<Real>,
    emb: &SkillEmbeddings,
    worker_seeds: &[u64],
    skills: &[ActionLanguage],
    weights: &[f64],
    cfg: &PpoConfig,
) -> Result<Vec<Rollout>> {
    if skills.is_empty() {
        return Err(Error::Config("no skills to train on".into()));
    }
    if skills.len() != weights.len() || weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Config("skill weights must be positive, one per skill".into()));
    }
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(worker_seeds.len() * cfg.sync_interval);
    for (worker, &seed) in worker_seeds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..cfg.sync_interval {
            let mut u = rng.gen_range(0.0..total);
            let mut pick = skills.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            out.push(run_episode(policy, emb, skills[pick], cfg, worker, &mut rng)?);
        }
    }
    Ok(out)
}

/// One flattened training sample with its advantage estimate.
#[derive(Clone, Debug)]
pub struct StepSample<S> {
    pub state: FineState<S>,
    pub action: ConcreteAction,
    pub logp_old: S,
    pub advantage: S,
    pub ret: S,
}

/// Generalized advantage estimation over one episode; the episode end is
/// treated as terminal (no bootstrap past the horizon).
fn gae(transitions: &[Transition], gamma: f64, lam: f64) -> Vec<(f64, f64)> {
    let n = transitions.len();
    let mut out = vec![(0.0, 0.0); n];
    let mut adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { transitions[t + 1].value } else { 0.0 };
        let delta = transitions[t].reward + gamma * next_value - transitions[t].value;
        adv = delta + gamma * lam * adv;
        out[t] = (adv, adv + transitions[t].value);
    }
    out
}

/// Flattens rollouts into normalized-advantage step samples.
pub fn prepare_steps(rollouts: &[Rollout], gamma: f64, lam: f64) -> Vec<StepSample<Real>> {
    let mut steps = Vec::new();
    for r in rollouts {
        let le = &r.goal;
        for (t, (adv, ret)) in r.transitions.iter().zip(gae(&r.transitions, gamma, lam)) {
            steps.push(StepSample {
                state: FineState::new(&r.depth, le, t.tactile),
                action: t.action,
                logp_old: t.logp as Real,
                advantage: adv as Real,
                ret: ret as Real,
            });
        }
    }
    if steps.len() > 1 {
        let n = steps.len() as f64;
        let mean = steps.iter().map(|s| s.advantage as f64).sum::<f64>() / n;
        let var = steps.iter().map(|s| (s.advantage as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-8);
        for s in steps.iter_mut() {
            s.advantage = ((s.advantage as f64 - mean) / std) as Real;
        }
    }
    steps
}

/// Mean clipped-surrogate PPO loss (policy + value + entropy terms) over
/// `steps`, optionally accumulating analytic gradients.
pub fn ppo_loss<S: Scalar>(
    policy: &PolicyNet<S>,
    steps: &[StepSample<S>],
    clip: f64,
    vf_coef: f64,
    ent_coef: f64,
    mut grads: Option<&mut GradStore<S>>,
) -> S {
    assert!(!steps.is_empty());
    let scale = S::one() / S::from_usize(steps.len());
    let (lo, hi) = (S::from_f64(1.0 - clip), S::from_f64(1.0 + clip));
    let (vf, ec) = (S::from_f64(vf_coef), S::from_f64(ent_coef));
    let mut total = S::zero();
    for step in steps {
        let (dist, value, cache) = policy.forward(&step.state);
        let logp = dist.log_prob(&step.action);
        let ratio = (logp - step.logp_old).exp();
        let unclipped = ratio * step.advantage;
        let clipped = ratio.max(lo).min(hi) * step.advantage;
        let surrogate = -unclipped.min(clipped);
        let vdiff = value - step.ret;
        let vloss = S::half() * vf * vdiff * vdiff;
        let ent = dist.entropy();
        total += surrogate + vloss - ec * ent;

        let Some(g) = grads.as_deref_mut() else { continue };
        // The surrogate gradient flows only through the unclipped branch.
        let g_logp =
            if unclipped <= clipped { -step.advantage * ratio * scale } else { S::zero() };
        let chosen = [step.action.dx, step.action.dy, step.action.z, step.action.alpha, step.action.beta];
        let factors: [&[S]; 5] = [&dist.dx, &dist.dy, &dist.z, &dist.alpha, &dist.beta];
        let mut dlogits: Vec<Vec<S>> = Vec::with_capacity(5);
        for (probs, &a) in factors.iter().zip(&chosen) {
            let h: S = probs
                .iter()
                .map(|&p| if p > S::zero() { -p * p.ln() } else { S::zero() })
                .sum();
            let mut d = vec![S::zero(); probs.len()];
            for (j, &p) in probs.iter().enumerate() {
                // d logp / d logit_j = 1[j=a] - p_j; d entropy / d logit_j =
                // -p_j (ln p_j + H).
                let onehot = if j == a { S::one() } else { S::zero() };
                let dent = -p * (p.max(S::from_f64(1e-30)).ln() + h);
                d[j] = g_logp * (onehot - p) - ec * scale * dent;
            }
            dlogits.push(d);
        }
        let up = HeadGrads {
            dx: dlogits[0].clone(),
            dy: dlogits[1].clone(),
            z: dlogits[2].clone(),
            alpha: dlogits[3].clone(),
            beta: dlogits[4].clone(),
            value: vf * vdiff * scale,
        };
        policy.backward(&cache, &up, g);
    }
    total * scale
}

/// One PPO optimization pass over a collected batch. Returns the mean loss
/// of the final epoch.
pub fn ppo_update(
    policy: &mut PolicyNet<Real>,
    rollouts: &[Rollout],
    cfg: &PpoConfig,
    opt: &mut Adam<Real>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let steps = prepare_steps(rollouts, cfg.gamma, cfg.lam);
    if steps.is_empty() {
        return Err(Error::Training("no transitions in rollout batch".into()));
    }
    let mut order: Vec<usize> = (0..steps.len()).collect();
    let mut last_epoch_loss = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.minibatch) {
            let batch: Vec<StepSample<Real>> = chunk.iter().map(|&i| steps[i].clone()).collect();
            let mut grads = GradStore::new();
            let loss =
                ppo_loss(policy, &batch, cfg.clip, cfg.vf_coef, cfg.ent_coef, Some(&mut grads));
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite PPO loss {loss}")));
            }
            epoch_loss += loss as f64 * chunk.len() as f64;
            opt.step(&grads, 1.0, |f| policy.visit_mut("", f));
        }
        last_epoch_loss = epoch_loss / steps.len() as f64;
    }
    Ok(last_epoch_loss)
}

/// One line of the training log.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainLog {
    pub update: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub loss: f64,
}

fn worker_seed(base: u64, worker: usize, round: usize) -> u64 {
    let mut x = base
        ^ (worker as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15)
        ^ (round as u64 + 1).wrapping_mul(0xBF58476D1CE4E5B9);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Full training loop: collect with frozen snapshot, update, repeat.
///
/// Skill sampling is adaptive: each skill's weight is 1 minus its running
/// success rate (floored), so once the easy skills saturate the rollout
/// budget shifts to the ones that still fail. Fully deterministic from
/// `cfg.seed`.
pub fn train_policy(
    policy: &mut PolicyNet<Real>,
    emb: &SkillEmbeddings,
    cfg: &PpoConfig,
) -> Result<Vec<TrainLog>> {
    let skills = cfg.skills.clone().unwrap_or_else(executable_skills);
    let mut opt = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.updates);
    let mut ema = vec![0.0f64; skills.len()];
    for update in 0..cfg.updates {
        let weights: Vec<f64> = ema.iter().map(|&e| (1.0 - e).max(0.02)).collect();
        let seeds: Vec<u64> =
            (0..cfg.workers).map(|w| worker_seed(cfg.seed, w, update)).collect();
        let rollouts = collect_rollouts_weighted(policy, emb, &seeds, &skills, &weights, cfg)?;
        for (i, skill) in skills.iter().enumerate() {
            let (mut n, mut wins) = (0usize, 0usize);
            for r in rollouts.iter().filter(|r| r.skill == *skill) {
                n += 1;
                wins += r.success as usize;
            }
            if n > 0 {
                let rate = wins as f64 / n as f64;
                ema[i] = 0.8 * ema[i] + 0.2 * rate;
            }
        }
        let n = rollouts.len() as f64;
        let mean_return = rollouts
            .iter()
            .map(|r| r.transitions.iter().map(|t| t.reward).sum::<f64>())
            .sum::<f64>()
            / n;
        let success_rate = rollouts.iter().filter(|r| r.success).count() as f64 / n;
        let trainable: Vec<Rollout> =
            rollouts.into_iter().filter(|r| !r.transitions.is_empty()).collect();
        let loss = if trainable.is_empty() {
            0.0
        } else {
            ppo_update(policy, &trainable, cfg, &mut opt, &mut rng)?
        };
        log.push(TrainLog { update, mean_return, success_rate, loss });
    }
    Ok(log)
}

/// Greedy per-skill success rate over a fixed seeded evaluation set.
pub fn eval_skill(
    policy: &PolicyNet<Real>,
    emb: &SkillEmbeddings,
    skill: &ActionLanguage,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let noise = CameraNoise::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0usize;
    for _ in 0..episodes {
        let w = skill_scenario(skill, rng.gen())?;
        let cam = CameraModel::sample(&noise, &mut rng);
        let (_, ok, _, _) = super::policy::run_skill_policy(policy, emb, &w, skill, H_SKILL, &cam)?;
        if ok {
            wins += 1;
        }
    }
    Ok(wins as f64 / episodes.max(1) as f64)
}
