//! Episode execution: the planner/skill loop, scheduled perturbations, and
//! line-delimited traces that replay bit-identically.
//!
//! Two planner regimes are supported. Closed-loop re-infers the next skill
//! from a fresh observation before every skill execution; infer-all decodes
//! the whole plan from the initial observation once and executes it blindly.
//! Everything an episode does is captured in an [`EpisodeTrace`] whose
//! simulator-derived content can be recomputed from the spec alone.

use crate::coarse::{vocab, CoarseModel, CoarseState};
use crate::corpus::dataset::MAX_PLAN_STEPS;
use crate::corpus::{
    oracle_next_step, oracle_skill_executor_logged, run_oracle_plan, scenario_for, Instruction,
};
use crate::domain::{ActionLanguage, Category, Goal, TaskId};
use crate::fine::{run_skill_policy, skill_ready, PolicyNet, SkillEmbeddings, H_SKILL};
use crate::sim::{
    apply_action, check_predicate, inject_event, render_depth, reset_scenario, CameraModel,
    CameraNoise, ConcreteAction, Event, SimEvent, WorldState, GRID_H, GRID_W,
};
use crate::{Error, Real, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerMode {
    ClosedLoop,
    InferAll,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkillsMode {
    Oracle,
    Learned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorMode {
    pub planner: PlannerMode,
    pub skills: SkillsMode,
    /// When false the planner sees tactile = 0 regardless of the gripper.
    pub tactile: bool,
}

impl ExecutorMode {
    pub fn closed_loop(skills: SkillsMode) -> ExecutorMode {
        ExecutorMode { planner: PlannerMode::ClosedLoop, skills, tactile: true }
    }
    pub fn infer_all(skills: SkillsMode) -> ExecutorMode {
        ExecutorMode { planner: PlannerMode::InferAll, skills, tactile: true }
    }
}

/// A perturbation injected right before the observation of plan step
/// `at_step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub at_step: usize,
    pub event: Event,
}

/// Everything needed to reconstruct an episode from scratch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub task: TaskId,
    pub target: Option<Category>,
    /// Instruction template index for the task.
    pub variant: usize,
    /// Overrides the templated text (rephrased evaluations).
    pub instruction: Option<String>,
    pub scenario_seed: u64,
    /// Drives everything stochastic outside the world itself (camera jitter).
    pub episode_seed: u64,
    pub p_slip: f64,
    pub mode: ExecutorMode,
    pub max_plan_steps: usize,
    pub events: Vec<ScheduledEvent>,
}

impl EpisodeSpec {
    pub fn new(task: TaskId, target: Option<Category>, mode: ExecutorMode, seed: u64) -> Self {
        EpisodeSpec {
            task,
            target,
            variant: (seed % 2) as usize,
            instruction: None,
            scenario_seed: seed,
            episode_seed: seed ^ 0x5EED_CA11,
            p_slip: 0.0,
            mode,
            max_plan_steps: MAX_PLAN_STEPS,
            events: Vec::new(),
        }
    }

    pub fn instruction(&self) -> Instruction {
        let mut inst = Instruction::new(self.task, self.target, self.variant);
        if let Some(text) = &self.instruction {
            inst.text = text.clone();
        }
        inst
    }

    pub fn initial_world(&self) -> Result<WorldState> {
        let mut cfg = scenario_for(self.task, self.target);
        cfg.p_slip = self.p_slip;
        reset_scenario(&cfg, self.scenario_seed)
    }
}

/// How the episode ended. "Done" emitted with the task predicate true is the
/// only success.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalStatus {
    DoneSuccess,
    DoneFailure,
    StepLimit,
    InvalidDecode,
}

/// One planner step: what was injected, observed, inferred and executed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub injected: Vec<Event>,
    pub depth: Vec<f32>,
    pub tactile: u8,
    /// Raw decode text; empty on open-loop steps after the first.
    pub decoded: String,
    pub skill: Option<ActionLanguage>,
    pub actions: Vec<ConcreteAction>,
    pub events: Vec<SimEvent>,
    pub skill_success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub spec: EpisodeSpec,
    pub steps: Vec<TraceStep>,
    pub status: TerminalStatus,
}

impl EpisodeTrace {
    pub fn success(&self) -> bool {
        self.status == TerminalStatus::DoneSuccess
    }

    /// The inferred skill sequence, in order.
    pub fn skills(&self) -> Vec<ActionLanguage> {
        self.steps.iter().filter_map(|s| s.skill).collect()
    }
}

/// Where next-skill inferences come from. The oracle source exists for
/// machinery tests and upper-bound baselines; evaluations use the model.
pub enum PlanSource<'a> {
    Model(&'a CoarseModel<Real>),
    Oracle,
}

/// An optional learned skill executor; required when
/// [`SkillsMode::Learned`] is requested.
pub type FineStack<'a> = Option<(&'a PolicyNet<Real>, &'a SkillEmbeddings)>;

fn fire_events(
    w: &WorldState,
    events: &[ScheduledEvent],
    step: usize,
) -> Result<(WorldState, Vec<Event>)> {
    let mut w = w.clone();
    let mut fired = Vec::new();
    for ev in events.iter().filter(|e| e.at_step == step) {
        w = inject_event(&w, &ev.event)?;
        fired.push(ev.event.clone());
    }
    Ok((w, fired))
}

fn execute_skill(
    fine: FineStack,
    skills: SkillsMode,
    w: &WorldState,
    skill: &ActionLanguage,
    cam: &CameraModel,
) -> Result<(WorldState, bool, Vec<ConcreteAction>, Vec<SimEvent>)> {
    match skills {
        SkillsMode::Oracle => Ok(oracle_skill_executor_logged(w, skill)),
        SkillsMode::Learned => {
            let (policy, emb) =
                fine.ok_or_else(|| Error::Config("learned skill mode needs a policy".into()))?;
            run_skill_policy(policy, emb, w, skill, H_SKILL, cam)
        }
    }
}

/// Runs one episode under `spec.mode`.
pub fn run_episode(
    planner: &PlanSource,
    fine: FineStack,
    spec: &EpisodeSpec,
) -> Result<EpisodeTrace> {
    match spec.mode.planner {
        PlannerMode::ClosedLoop => run_closed_loop(planner, fine, spec),
        PlannerMode::InferAll => run_infer_all(planner, fine, spec),
    }
}

/// Observe, infer one skill, execute, repeat until "Done", a decode failure
/// or the step limit.
pub fn run_closed_loop(
    planner: &PlanSource,
    fine: FineStack,
    spec: &EpisodeSpec,
) -> Result<EpisodeTrace> {
    let inst = spec.instruction();
    let goal = inst.goal();
    let mut w = spec.initial_world()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.episode_seed);
    let noise = CameraNoise::default();
    let mut steps = Vec::new();
    for plan_step in 0..spec.max_plan_steps {
        let (next, injected) = fire_events(&w, &spec.events, plan_step)?;
        w = next;
        let cam = CameraModel::sample(&noise, &mut rng);
        let depth = render_depth(&w, &cam).data;
        let tactile = if spec.mode.tactile { w.tactile() } else { 0 };
        let (decoded, skill) = match planner {
            PlanSource::Model(m) => m.infer(&CoarseState {
                instruction: inst.text.clone(),
                depth: depth.clone(),
                tactile,
            }),
            PlanSource::Oracle => {
                let s = oracle_next_step(&w, &inst)?;
                (s.text(), Some(s))
            }
        };
        let Some(skill) = skill else {
            steps.push(TraceStep {
                injected,
                depth,
                tactile,
                decoded,
                skill: None,
                actions: Vec::new(),
                events: Vec::new(),
                skill_success: false,
            });
            return Ok(EpisodeTrace {
                spec: spec.clone(),
                steps,
                status: TerminalStatus::InvalidDecode,
            });
        };
        if skill.is_terminal() {
            let ok = check_predicate(&w, &goal)?;
            steps.push(TraceStep {
                injected,
                depth,
                tactile,
                decoded,
                skill: Some(skill),
                actions: Vec::new(),
                events: Vec::new(),
                skill_success: ok,
            });
            let status =
                if ok { TerminalStatus::DoneSuccess } else { TerminalStatus::DoneFailure };
            return Ok(EpisodeTrace { spec: spec.clone(), steps, status });
        }
        let (next, ok, actions, events) = execute_skill(fine, spec.mode.skills, &w, &skill, &cam)?;
        w = next;
        steps.push(TraceStep {
            injected,
            depth,
            tactile,
            decoded,
            skill: Some(skill),
            actions,
            events,
            skill_success: ok,
        });
    }
    Ok(EpisodeTrace { spec: spec.clone(), steps, status: TerminalStatus::StepLimit })
}

/// Decode the whole plan from the initial observation, then execute it
/// open-loop. Scheduled events still fire by step index.
pub fn run_infer_all(
    planner: &PlanSource,
    fine: FineStack,
    spec: &EpisodeSpec,
) -> Result<EpisodeTrace> {
    let inst = spec.instruction();
    let goal = inst.goal();
    let mut w = spec.initial_world()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.episode_seed);
    let noise = CameraNoise::default();

    let (next, injected0) = fire_events(&w, &spec.events, 0)?;
    w = next;
    let cam0 = CameraModel::sample(&noise, &mut rng);
    let depth0 = render_depth(&w, &cam0).data;
    let tactile0 = if spec.mode.tactile { w.tactile() } else { 0 };
    let (decoded, plan) = match planner {
        PlanSource::Model(m) => m.infer_plan(&CoarseState {
            instruction: inst.text.clone(),
            depth: depth0.clone(),
            tactile: tactile0,
        }),
        PlanSource::Oracle => {
            let (plan, _, _) = run_oracle_plan(&w, &inst, spec.max_plan_steps)?;
            let text = plan
                .iter()
                .map(|s| s.text())
                .collect::<Vec<_>>()
                .join(&format!(" {} ", vocab::SEP_WORD));
            (text, Some(plan))
        }
    };

    let mut steps = Vec::new();
    let Some(plan) = plan else {
        steps.push(TraceStep {
            injected: injected0,
            depth: depth0,
            tactile: tactile0,
            decoded,
            skill: None,
            actions: Vec::new(),
            events: Vec::new(),
            skill_success: false,
        });
        return Ok(EpisodeTrace { spec: spec.clone(), steps, status: TerminalStatus::InvalidDecode });
    };

    let mut first = Some((injected0, depth0, tactile0, cam0, decoded));
    for (i, skill) in plan.iter().enumerate().take(spec.max_plan_steps) {
        let (injected, depth, tactile, cam, decoded) = match first.take() {
            Some(parts) => parts,
            None => {
                let (next, injected) = fire_events(&w, &spec.events, i)?;
                w = next;
                let cam = CameraModel::sample(&noise, &mut rng);
                let depth = render_depth(&w, &cam).data;
                let tactile = if spec.mode.tactile { w.tactile() } else { 0 };
                (injected, depth, tactile, cam, String::new())
            }
        };
        if skill.is_terminal() {
            let ok = check_predicate(&w, &goal)?;
            steps.push(TraceStep {
                injected,
                depth,
                tactile,
                decoded,
                skill: Some(*skill),
                actions: Vec::new(),
                events: Vec::new(),
                skill_success: ok,
            });
            let status =
                if ok { TerminalStatus::DoneSuccess } else { TerminalStatus::DoneFailure };
            return Ok(EpisodeTrace { spec: spec.clone(), steps, status });
        }
        let (next, ok, actions, events) = execute_skill(fine, spec.mode.skills, &w, skill, &cam)?;
        w = next;
        steps.push(TraceStep {
            injected,
            depth,
            tactile,
            decoded,
            skill: Some(*skill),
            actions,
            events,
            skill_success: ok,
        });
    }
    Ok(EpisodeTrace { spec: spec.clone(), steps, status: TerminalStatus::StepLimit })
}

/// Re-simulates a trace from its spec and recorded decisions, verifying every
/// simulator-derived value. Returns the reconstructed trace, which serializes
/// byte-identically to the original when the simulation is deterministic.
pub fn replay(trace: &EpisodeTrace) -> Result<EpisodeTrace> {
    let spec = &trace.spec;
    let inst = spec.instruction();
    let goal = inst.goal();
    let mut w = spec.initial_world()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.episode_seed);
    let noise = CameraNoise::default();
    let diverged = |step: usize, what: &str| -> Error {
        Error::Trace(format!("replay diverged at step {step}: {what}"))
    };
    let mut steps = Vec::new();
    let mut last_terminal_ok = None;
    for (i, rec) in trace.steps.iter().enumerate() {
        let (next, injected) = fire_events(&w, &spec.events, i)?;
        w = next;
        if injected != rec.injected {
            return Err(diverged(i, "injected events"));
        }
        let cam = CameraModel::sample(&noise, &mut rng);
        let depth = render_depth(&w, &cam).data;
        if depth != rec.depth {
            return Err(diverged(i, "depth frame"));
        }
        let tactile = if spec.mode.tactile { w.tactile() } else { 0 };
        if tactile != rec.tactile {
            return Err(diverged(i, "tactile bit"));
        }
        let skill_success = match rec.skill {
            None => false,
            Some(s) if s.is_terminal() => {
                let ok = check_predicate(&w, &goal)?;
                last_terminal_ok = Some(ok);
                ok
            }
            Some(s) => {
                if spec.mode.skills == SkillsMode::Learned {
                    w = skill_ready(&w);
                }
                let mut events = Vec::new();
                for a in &rec.actions {
                    let (next, _, ev) = apply_action(&w, a);
                    w = next;
                    events.extend(ev);
                }
                if events != rec.events {
                    return Err(diverged(i, "skill events"));
                }
                check_predicate(&w, &Goal::Skill(s))?
            }
        };
        if skill_success != rec.skill_success {
            return Err(diverged(i, "skill outcome"));
        }
        steps.push(TraceStep {
            injected,
            depth,
            tactile,
            decoded: rec.decoded.clone(),
            skill: rec.skill,
            actions: rec.actions.clone(),
            events: rec.events.clone(),
            skill_success,
        });
    }
    let status = match (trace.status, last_terminal_ok) {
        (TerminalStatus::InvalidDecode, _) => TerminalStatus::InvalidDecode,
        (TerminalStatus::StepLimit, _) => TerminalStatus::StepLimit,
        (_, Some(true)) => TerminalStatus::DoneSuccess,
        (_, Some(false)) => TerminalStatus::DoneFailure,
        (s, None) => return Err(Error::Trace(format!("status {s:?} without a terminal step"))),
    };
    if status != trace.status {
        return Err(Error::Trace(format!(
            "replay status {status:?} does not match recorded {:?}",
            trace.status
        )));
    }
    Ok(EpisodeTrace { spec: spec.clone(), steps, status })
}

/// Line-delimited encoding: spec line, one line per step, status line.
pub fn trace_to_string(trace: &EpisodeTrace) -> Result<String> {
    let enc = |e: serde_json::Error| Error::Trace(format!("encode: {e}"));
    let mut out = serde_json::to_string(&trace.spec).map_err(enc)?;
    out.push('\n');
    for step in &trace.steps {
        out.push_str(&serde_json::to_string(step).map_err(enc)?);
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(&trace.status).map_err(enc)?);
    out.push('\n');
    Ok(out)
}

pub fn trace_from_string(text: &str) -> Result<EpisodeTrace> {
    let dec = |line: usize, e: serde_json::Error| Error::Trace(format!("line {line}: {e}"));
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 2 {
        return Err(Error::Trace("trace needs at least a spec and a status line".into()));
    }
    let spec: EpisodeSpec = serde_json::from_str(lines[0]).map_err(|e| dec(1, e))?;
    let mut steps = Vec::with_capacity(lines.len() - 2);
    for (i, line) in lines[1..lines.len() - 1].iter().enumerate() {
        steps.push(serde_json::from_str(line).map_err(|e| dec(i + 2, e))?);
    }
    let status: TerminalStatus =
        serde_json::from_str(lines[lines.len() - 1]).map_err(|e| dec(lines.len(), e))?;
    Ok(EpisodeTrace { spec, steps, status })
}

pub fn write_trace(path: &Path, trace: &EpisodeTrace) -> Result<()> {
    std::fs::write(path, trace_to_string(trace)?)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_trace(path: &Path) -> Result<EpisodeTrace> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    trace_from_string(&text)
}

/// Scripted slip-recovery demonstration: cleaning the table where the first
/// successful grasp slips out of the gripper, so a closed-loop planner must
/// issue "Grasp an object" twice in a row before finishing.
pub fn slip_recovery_spec(mode: ExecutorMode, seed: u64) -> EpisodeSpec {
    let mut spec = EpisodeSpec::new(TaskId::CleanTable, None, mode, seed);
    spec.events.push(ScheduledEvent { at_step: 0, event: Event::SlipAtClosure { nth: 1 } });
    spec
}

/// Scripted mid-episode clutter for `w`: one extra piece of trash appearing
/// after `at_step` plan steps, placed in a free far corner. Far corners are
/// initially free and unlikely to be taken later (only slips relocate
/// objects, and they drop near the gripper).
pub fn clutter_event(w: &WorldState, at_step: usize) -> Result<ScheduledEvent> {
    let corners = [(GRID_H - 1, GRID_W - 1), (GRID_H - 1, 0), (6, GRID_W - 1), (GRID_H - 1, 8)];
    let cell = corners
        .into_iter()
        .find(|&c| w.object_at(c).is_none())
        .ok_or_else(|| Error::Scenario("no free cell for the scripted object".into()))?;
    Ok(ScheduledEvent {
        at_step,
        event: Event::AddObject { category: Category::Trash, cell, scale: 1.0 },
    })
}

/// Table-cleaning episode where an unplanned object appears mid-episode. A
/// plan decoded up front cannot account for it.
pub fn add_object_spec(mode: ExecutorMode, seed: u64, at_step: usize) -> Result<EpisodeSpec> {
    let mut spec = EpisodeSpec::new(TaskId::CleanTable, None, mode, seed);
    let event = clutter_event(&spec.initial_world()?, at_step)?;
    spec.events.push(event);
    Ok(spec)
}
