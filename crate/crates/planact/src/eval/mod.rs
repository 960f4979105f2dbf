//! Evaluation harness: seeded batch evaluations over the task set, Wilson
//! confidence intervals, the unseen-word generalization protocol, the
//! tactile-ambiguity probe, and byte-stable reports.

use crate::coarse::{CoarseModel, CoarseState};
use crate::corpus::dataset::MAX_PLAN_STEPS;
use crate::corpus::{rephrase, DatasetRecord, Instruction, RephraseMode, SubstitutionLexicon};
use crate::domain::{ActionLanguage, TaskFamily, TaskId, ALL_TASKS};
use crate::episode::{
    clutter_event, run_episode, EpisodeSpec, ExecutorMode, FineStack, PlanSource, PlannerMode,
    SkillsMode,
};
use crate::fine::{PolicyNet, SkillEmbeddings};
use crate::sim::{render_depth, reset_scenario, CameraModel, CameraNoise, Held};
use crate::{Error, Real, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// Bernoulli tally with a Wilson 95% interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub successes: usize,
    pub trials: usize,
}

impl Counts {
    pub fn add(&mut self, success: bool) {
        self.successes += usize::from(success);
        self.trials += 1;
    }

    pub fn merge(&mut self, other: Counts) {
        self.successes += other.successes;
        self.trials += other.trials;
    }

    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }

    pub fn wilson95(&self) -> (f64, f64) {
        wilson95(self.successes, self.trials)
    }
}

/// Wilson score interval at 95% coverage. Zero trials: the vacuous (0, 1).
pub fn wilson95(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let spread = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    (((center - spread) / denom).max(0.0), ((center + spread) / denom).min(1.0))
}

/// One evaluation batch: which planner regime, how many seeded trials per
/// task, and which perturbations are active.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub planner: PlannerMode,
    /// When false the planner observes tactile = 0.
    pub tactile: bool,
    pub trials: usize,
    pub seed: u64,
    pub rephrase: RephraseMode,
    pub p_slip: f64,
    /// Schedule an extra piece of trash to appear mid-episode on the
    /// table-cleaning tasks.
    pub inject_clutter: bool,
    /// Restricts the evaluation; `None` runs all 17 tasks.
    pub tasks: Option<Vec<TaskId>>,
    pub max_plan_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            planner: PlannerMode::ClosedLoop,
            tactile: true,
            trials: 50,
            seed: 7,
            rephrase: RephraseMode::None,
            p_slip: 0.0,
            inject_clutter: false,
            tasks: None,
            max_plan_steps: MAX_PLAN_STEPS,
        }
    }
}

impl RunConfig {
    pub fn task_list(&self) -> Vec<TaskId> {
        self.tasks.clone().unwrap_or_else(|| ALL_TASKS.to_vec())
    }

    /// Report label for this configuration under the given skill executor.
    pub fn mode_label(&self, skills: SkillsMode) -> String {
        let mut parts = vec![
            match self.planner {
                PlannerMode::ClosedLoop => "closed-loop",
                PlannerMode::InferAll => "infer-all",
            },
            match skills {
                SkillsMode::Oracle => "oracle-skills",
                SkillsMode::Learned => "learned-skills",
            },
        ];
        if !self.tactile {
            parts.push("no-tactile");
        }
        match self.rephrase {
            RephraseMode::None => {}
            RephraseMode::Verb => parts.push("verb"),
            RephraseMode::Noun => parts.push("noun"),
            RephraseMode::Both => parts.push("both"),
        }
        if self.p_slip > 0.0 {
            parts.push("slips");
        }
        if self.inject_clutter {
            parts.push("clutter");
        }
        parts.join("+")
    }
}

/// Per-task tallies for one evaluated configuration. Oracle-skill runs fill
/// `plan` (plan success), learned-skill runs fill `exec` (task success).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub task: TaskId,
    pub family: TaskFamily,
    pub mode: String,
    pub plan: Option<Counts>,
    pub exec: Option<Counts>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rows: Vec<Row>,
}

impl Metrics {
    pub fn merge(&mut self, other: Metrics) {
        self.rows.extend(other.rows);
    }

    /// Tallies aggregated over (mode, family), families in fixed order, plus
    /// an overall row per mode (family = `None`).
    pub fn rollup(&self) -> Vec<(String, Option<TaskFamily>, Option<Counts>, Option<Counts>)> {
        let mut modes: Vec<&str> = self.rows.iter().map(|r| r.mode.as_str()).collect();
        modes.sort_unstable();
        modes.dedup();
        let families =
            [TaskFamily::ShortHorizon, TaskFamily::LongHorizon, TaskFamily::Hybrid];
        let mut out = Vec::new();
        for mode in modes {
            let scopes = families.iter().map(|&f| Some(f)).chain([None]);
            for family in scopes {
                let mut plan: Option<Counts> = None;
                let mut exec: Option<Counts> = None;
                for row in self.rows.iter().filter(|r| r.mode == mode) {
                    if family.is_some_and(|f| f != row.family) {
                        continue;
                    }
                    if let Some(c) = row.plan {
                        plan.get_or_insert_with(Counts::default).merge(c);
                    }
                    if let Some(c) = row.exec {
                        exec.get_or_insert_with(Counts::default).merge(c);
                    }
                }
                if plan.is_some() || exec.is_some() {
                    out.push((mode.to_string(), family, plan, exec));
                }
            }
        }
        out
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn trial_seed(seed: u64, task_index: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(seed ^ ((task_index as u64) << 32)) ^ trial as u64)
}

/// Builds the seeded spec for one evaluation trial.
fn trial_spec(
    task: TaskId,
    task_index: usize,
    trial: usize,
    skills: SkillsMode,
    cfg: &RunConfig,
    lex: &SubstitutionLexicon,
) -> Result<EpisodeSpec> {
    let seed = trial_seed(cfg.seed, task_index, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = Instruction::sample(task, &mut rng);
    let mode = ExecutorMode { planner: cfg.planner, skills, tactile: cfg.tactile };
    let mut spec = EpisodeSpec::new(task, inst.target, mode, seed);
    spec.p_slip = cfg.p_slip;
    spec.max_plan_steps = cfg.max_plan_steps;
    if cfg.rephrase != RephraseMode::None {
        let base = spec.instruction();
        spec.instruction = Some(rephrase(&base, cfg.rephrase, lex).text);
    }
    if cfg.inject_clutter && clutter_applies(task) {
        let event = clutter_event(&spec.initial_world()?, 2)?;
        spec.events.push(event);
    }
    Ok(spec)
}

/// Tasks whose goal covers every piece of trash on the table, so scripted
/// clutter genuinely extends the required plan.
fn clutter_applies(task: TaskId) -> bool {
    matches!(task, TaskId::CleanTable | TaskId::CleanAndCut | TaskId::PlaceAndClean)
}

/// Runs `cfg.trials` seeded episodes per task and tallies episode success.
pub fn evaluate(
    planner: &PlanSource,
    fine: FineStack,
    skills: SkillsMode,
    cfg: &RunConfig,
) -> Result<Metrics> {
    let lex = SubstitutionLexicon::default();
    let mut rows = Vec::new();
    for (ti, &task) in cfg.task_list().iter().enumerate() {
        let mut counts = Counts::default();
        for trial in 0..cfg.trials {
            let spec = trial_spec(task, ti, trial, skills, cfg, &lex)?;
            counts.add(run_episode(planner, fine, &spec)?.success());
        }
        let (plan, exec) = match skills {
            SkillsMode::Oracle => (Some(counts), None),
            SkillsMode::Learned => (None, Some(counts)),
        };
        rows.push(Row { task, family: task.family(), mode: cfg.mode_label(skills), plan, exec });
    }
    Ok(Metrics { rows })
}

/// Plan success: the learned planner drives oracle skill executors, so only
/// planning mistakes can fail an episode.
pub fn eval_plan_success(model: &CoarseModel<Real>, cfg: &RunConfig) -> Result<Metrics> {
    evaluate(&PlanSource::Model(model), None, SkillsMode::Oracle, cfg)
}

/// Task success: the learned planner drives the learned skill policy.
pub fn eval_task_success(
    model: &CoarseModel<Real>,
    policy: &PolicyNet<Real>,
    emb: &SkillEmbeddings,
    cfg: &RunConfig,
) -> Result<Metrics> {
    evaluate(&PlanSource::Model(model), Some((policy, emb)), SkillsMode::Learned, cfg)
}

/// Fails if any replacement word already occurs in the tuning data: that
/// would silently void the "unseen word" premise of the protocol.
pub fn guard_unseen_words<'a, I>(lex: &SubstitutionLexicon, tuning_texts: I) -> Result<()>
where
    I: IntoIterator<Item = &'a str>,
{
    let unseen: HashSet<&str> = lex.replacement_words().into_iter().collect();
    for text in tuning_texts {
        if let Some(word) = text.split_whitespace().find(|w| unseen.contains(w)) {
            return Err(Error::Protocol(format!(
                "replacement word '{word}' appears in the tuning data: '{text}'"
            )));
        }
    }
    Ok(())
}

/// Plan success under word substitution the tuned prompts never saw.
/// `tuning` is the dataset the prompts were tuned on; the unseen-word premise
/// is verified against it before anything runs.
pub fn eval_generalization(
    model: &CoarseModel<Real>,
    cfg: &RunConfig,
    tuning: &[DatasetRecord],
) -> Result<Metrics> {
    if cfg.rephrase == RephraseMode::None {
        return Err(Error::Protocol("generalization eval needs a rephrase mode".into()));
    }
    let lex = SubstitutionLexicon::default();
    guard_unseen_words(&lex, tuning.iter().map(|r| r.instruction.text.as_str()))?;
    eval_plan_success(model, cfg)
}

/// One observation of the tactile-ambiguity probe.
#[derive(Clone, Debug)]
pub struct AmbiguityCase {
    pub state: CoarseState,
    pub label: ActionLanguage,
}

/// Balanced set of state pairs a planner cannot tell apart without touch:
/// mid-clean table scenes whose depth frames are bitwise identical, where the
/// gripper either holds a piece of trash (next skill: put it into the bin) or
/// holds nothing (next skill: grasp one). Held objects sit above the table
/// crop, so they leave no depth signature.
pub fn ambiguity_set(pairs: usize, seed: u64) -> Result<Vec<AmbiguityCase>> {
    use crate::corpus::{oracle_next_step, scenario_for};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = CameraNoise::default();
    let mut cases = Vec::with_capacity(2 * pairs);
    for i in 0..pairs {
        let inst = Instruction::new(TaskId::CleanTable, None, i % 2);
        let mut w =
            reset_scenario(&scenario_for(inst.task, inst.target), splitmix64(seed) ^ i as u64)?;
        // The scene may spawn a single object; the pair needs one to hold and
        // one left behind.
        if w.objects.iter().filter(|o| o.on_table()).count() < 2 {
            let cell = (crate::sim::SPAWN_ROWS.map(|r| (0..11).map(move |c| (r, c))))
                .flatten()
                .find(|&c| w.object_at(c).is_none())
                .ok_or_else(|| Error::Scenario("no free cell for a second object".into()))?;
            w.add_object(crate::domain::Category::Trash, cell, 1.0);
        }
        let on_table: Vec<usize> =
            w.objects.iter().filter(|o| o.on_table()).map(|o| o.id).collect();
        // Same visible scene twice: one world holds the first object (it is
        // in the gripper, not rendered), the other world never had it.
        let mut held = w.clone();
        held.held = Some(Held::Object(on_table[0]));
        held.gripper.closed = true;
        let mut free = w;
        free.objects.retain(|o| o.id != on_table[0]);

        let cam = CameraModel::sample(&noise, &mut rng);
        let depth = render_depth(&held, &cam).data;
        debug_assert_eq!(depth, render_depth(&free, &cam).data);
        cases.push(AmbiguityCase {
            state: CoarseState { instruction: inst.text.clone(), depth: depth.clone(), tactile: 1 },
            label: oracle_next_step(&held, &inst)?,
        });
        cases.push(AmbiguityCase {
            label: oracle_next_step(&free, &inst)?,
            state: CoarseState { instruction: inst.text, depth, tactile: 0 },
        });
    }
    Ok(cases)
}

/// Next-skill accuracy on the probe; `tactile_on = false` masks the bit the
/// way a touchless planner would see it.
pub fn ambiguity_accuracy(
    model: &CoarseModel<Real>,
    cases: &[AmbiguityCase],
    tactile_on: bool,
) -> f64 {
    if cases.is_empty() {
        return 0.0;
    }
    let correct = cases
        .iter()
        .filter(|case| {
            let mut state = case.state.clone();
            if !tactile_on {
                state.tactile = 0;
            }
            model.infer(&state).1 == Some(case.label)
        })
        .count();
    correct as f64 / cases.len() as f64
}

fn family_rank(f: TaskFamily) -> usize {
    match f {
        TaskFamily::ShortHorizon => 0,
        TaskFamily::LongHorizon => 1,
        TaskFamily::Hybrid => 2,
    }
}

fn fmt_rate(c: Option<Counts>) -> String {
    c.map_or_else(|| "-".into(), |c| format!("{:.4}", c.rate()))
}

fn fmt_ci(c: Option<Counts>) -> String {
    c.map_or_else(
        || "-".into(),
        |c| {
            let (lo, hi) = c.wilson95();
            format!("[{lo:.4},{hi:.4}]")
        },
    )
}

fn fmt_trials(plan: Option<Counts>, exec: Option<Counts>) -> String {
    let trials = plan.map_or(0, |c| c.trials).max(exec.map_or(0, |c| c.trials));
    trials.to_string()
}

const REPORT_HEADER: &str = "task\tfamily\tmode\tplan_rate\tplan_ci\ttask_rate\ttask_ci\ttrials";

/// Renders a delimiter-separated report: one line per (task, mode) plus a
/// per-family and overall summary. Deterministic in the metrics content, so
/// identical runs produce byte-identical reports.
pub fn render_report(metrics: &Metrics) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    let mut rows = metrics.rows.clone();
    rows.sort_by(|a, b| {
        (a.mode.as_str(), family_rank(a.family), a.task.name()).cmp(&(
            b.mode.as_str(),
            family_rank(b.family),
            b.task.name(),
        ))
    });
    if rows.is_empty() {
        return out;
    }
    for r in &rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.task.name(),
            r.family.name(),
            r.mode,
            fmt_rate(r.plan),
            fmt_ci(r.plan),
            fmt_rate(r.exec),
            fmt_ci(r.exec),
            fmt_trials(r.plan, r.exec),
        ));
    }
    out.push_str("\nsummary\nscope\tmode\tplan_rate\tplan_ci\ttask_rate\ttask_ci\ttrials\n");
    for (mode, family, plan, exec) in metrics.rollup() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            family.map_or("overall", TaskFamily::name),
            mode,
            fmt_rate(plan),
            fmt_ci(plan),
            fmt_rate(exec),
            fmt_ci(exec),
            fmt_trials(plan, exec),
        ));
    }
    out
}

pub fn write_report(path: &Path, metrics: &Metrics) -> Result<()> {
    std::fs::write(path, render_report(metrics))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
