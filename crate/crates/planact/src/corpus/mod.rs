//! The task corpus: 17 language-conditioned tasks, their instruction
//! templates, the rule-based oracle that labels training data, and the
//! unseen-word rephrasing protocol.

pub mod dataset;
pub mod lexicon;
pub mod oracle;

pub use dataset::{generate_dataset, DatasetRecord};
pub use lexicon::{rephrase, RephraseMode, SubstitutionLexicon};
pub use oracle::{
    oracle_next_step, oracle_skill_executor, oracle_skill_executor_logged, run_oracle_plan,
};

use crate::domain::{Category, TaskFamily, TaskId, ALL_TASKS};
use crate::sim::{HoldAtStart, SceneTemplate, ScenarioConfig};
use rand::Rng;
use serde::{Deserialize, Serialize};

const ANY_CATEGORY: [Category; 8] = crate::domain::ALL_CATEGORIES;
const CUTTABLE: [Category; 3] = [Category::Apple, Category::Banana, Category::Cuttable];
const ROUND: [Category; 3] = [Category::Apple, Category::RoundObject, Category::Can];
const STOWABLE: [Category; 2] = [Category::Cosmetic, Category::Can];

/// Static description of one task.
#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub id: TaskId,
    pub family: TaskFamily,
    /// Instruction templates; `{obj}` is replaced by the target word.
    pub templates: &'static [&'static str],
    /// Categories the target slot may take (empty: no target).
    pub target_pool: &'static [Category],
}

pub fn task_spec(id: TaskId) -> TaskSpec {
    use TaskId::*;
    let (templates, target_pool): (&'static [&'static str], &'static [Category]) = match id {
        OpenDrawer => (&["please open the drawer", "open the drawer"], &[]),
        CloseDrawer => (&["please close the drawer", "close the drawer"], &[]),
        GraspObject => (&["please grasp an object", "grasp an object from the table"], &[]),
        GraspRound => (&["please grasp a round object", "grasp a round object"], &[]),
        GraspNearDrawer => (&["please grasp sth near the drawer", "grasp sth near the drawer"], &[]),
        PickKnife => (&["please pick the knife", "pick the knife"], &[]),
        // The short variant starts already holding the knife; the long one
        // must find it first. Same words, same rule program.
        CutWithKnife | CutFindKnife => (&["please cut the {obj}", "cut the {obj}"], &CUTTABLE),
        PlaceIntoBin => (&["please put the {obj} into the bin", "put the {obj} into the bin"], &ANY_CATEGORY),
        PlaceIntoDrawer => {
            (&["please place the {obj} in the drawer", "place the {obj} in the drawer"], &STOWABLE)
        }
        PlaceRound => (&["please place the round object", "place the round object"], &ROUND),
        PutIntoDrawer => {
            (&["please put the {obj} into the drawer", "put the {obj} into the drawer"], &STOWABLE)
        }
        CleanTable => (&["please clean the table", "clean the table"], &[]),
        PickAllRound => (&["please pick all round objects", "pick all round objects"], &[]),
        CleanAndCut => {
            (&["please clean the table and cut the {obj}", "clean the table and cut the {obj}"], &CUTTABLE)
        }
        PlaceAndClean => (
            &[
                "please place the {obj} in the drawer and clean the table",
                "place the {obj} in the drawer and clean the table",
            ],
            &STOWABLE,
        ),
        CloseAndGrasp => {
            (&["please close the drawer and grasp the {obj}", "close the drawer and grasp the {obj}"], &ANY_CATEGORY)
        }
    };
    TaskSpec { id, family: id.family(), templates, target_pool }
}

pub fn enumerate_tasks() -> Vec<TaskSpec> {
    ALL_TASKS.iter().map(|&t| task_spec(t)).collect()
}

/// Scene recipe for one episode of `task` with resolved `target`.
pub fn scenario_for(task: TaskId, target: Option<Category>) -> ScenarioConfig {
    use TaskId::*;
    let mut cfg = match task {
        OpenDrawer | CloseDrawer => ScenarioConfig::new(SceneTemplate::DrawerOnly),
        GraspObject | PlaceIntoBin | CloseAndGrasp => ScenarioConfig::new(SceneTemplate::SingleTarget),
        GraspRound | PickAllRound => ScenarioConfig::new(SceneTemplate::RoundMix),
        GraspNearDrawer => ScenarioConfig::new(SceneTemplate::NearDrawer),
        PickKnife | CutWithKnife | CutFindKnife => ScenarioConfig::new(SceneTemplate::KnifeTarget),
        PlaceIntoDrawer | PutIntoDrawer | PlaceRound => ScenarioConfig::new(SceneTemplate::SingleTarget),
        CleanTable => ScenarioConfig::new(SceneTemplate::TrashTable),
        CleanAndCut | PlaceAndClean => ScenarioConfig::new(SceneTemplate::MixedClutter),
    };
    cfg.target = target;
    match task {
        OpenDrawer => cfg.drawer_open = Some(false),
        CloseDrawer | CloseAndGrasp => cfg.drawer_open = Some(true),
        // Single-skill "place" tasks begin mid-manipulation.
        PlaceIntoBin | PlaceRound => cfg.hold_at_start = Some(HoldAtStart::Target),
        PlaceIntoDrawer => {
            cfg.drawer_open = Some(true);
            cfg.hold_at_start = Some(HoldAtStart::Target);
        }
        CutWithKnife => cfg.hold_at_start = Some(HoldAtStart::Knife),
        _ => {}
    }
    cfg
}

/// A resolved instruction: surface text plus the task/target grounding the
/// oracle needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub task: TaskId,
    pub target: Option<Category>,
}

impl Instruction {
    pub fn new(task: TaskId, target: Option<Category>, variant: usize) -> Instruction {
        let spec = task_spec(task);
        let template = spec.templates[variant % spec.templates.len()];
        let text = match target {
            Some(c) => template.replace("{obj}", c.word()),
            None => template.to_string(),
        };
        Instruction { text, task, target }
    }

    /// Samples a target (when the task takes one) and a template variant.
    pub fn sample<R: Rng>(task: TaskId, rng: &mut R) -> Instruction {
        let spec = task_spec(task);
        let target = if spec.target_pool.is_empty() {
            None
        } else {
            Some(spec.target_pool[rng.gen_range(0..spec.target_pool.len())])
        };
        let variant = rng.gen_range(0..spec.templates.len());
        Instruction::new(task, target, variant)
    }

    pub fn goal(&self) -> crate::domain::Goal {
        crate::domain::Goal::Task { task: self.task, target: self.target }
    }
}
