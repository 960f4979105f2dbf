//! Shared domain vocabulary: object categories, the closed action-language
//! set, and task identifiers. Everything else (simulator, corpus, models)
//! builds on these.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Cosmetic,
    Can,
    Apple,
    Banana,
    Knife,
    RoundObject,
    Trash,
    Cuttable,
}

pub const ALL_CATEGORIES: [Category; 8] = [
    Category::Cosmetic,
    Category::Can,
    Category::Apple,
    Category::Banana,
    Category::Knife,
    Category::RoundObject,
    Category::Trash,
    Category::Cuttable,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Round,
    NonRound,
}

impl Category {
    /// Surface word used in instructions and skill sentences.
    pub fn word(self) -> &'static str {
        match self {
            Category::Cosmetic => "cosmetic",
            Category::Can => "can",
            Category::Apple => "apple",
            Category::Banana => "banana",
            Category::Knife => "knife",
            Category::RoundObject => "ball",
            Category::Trash => "trash",
            Category::Cuttable => "bread",
        }
    }

    pub fn from_word(w: &str) -> Option<Category> {
        ALL_CATEGORIES.iter().copied().find(|c| c.word() == w)
    }

    pub fn shape(self) -> Shape {
        match self {
            Category::Apple | Category::RoundObject | Category::Can => Shape::Round,
            _ => Shape::NonRound,
        }
    }

    pub fn is_cuttable(self) -> bool {
        matches!(self, Category::Apple | Category::Banana | Category::Cuttable)
    }
}

/// One sentence from the closed skill set. The output alphabet of coarse
/// inference and the goal input of the fine policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionLanguage {
    OpenDrawer,
    CloseDrawer,
    GraspThe(Category),
    GraspAnObject,
    GraspRound,
    GraspNearDrawer,
    PutIntoDrawer(Category),
    PutIntoBin,
    PutRoundInBin,
    PickKnife,
    CutWithKnife,
    PlaceRound,
    Done,
}

impl ActionLanguage {
    pub fn text(&self) -> String {
        match self {
            ActionLanguage::OpenDrawer => "Open the drawer".into(),
            ActionLanguage::CloseDrawer => "Close the drawer".into(),
            ActionLanguage::GraspThe(c) => format!("Grasp the {}", c.word()),
            ActionLanguage::GraspAnObject => "Grasp an object".into(),
            ActionLanguage::GraspRound => "Grasp a round object".into(),
            ActionLanguage::GraspNearDrawer => "Grasp sth near the drawer".into(),
            ActionLanguage::PutIntoDrawer(c) => format!("Put the {} into the drawer", c.word()),
            ActionLanguage::PutIntoBin => "Put the object into the bin".into(),
            ActionLanguage::PutRoundInBin => "Put the round object in the bin".into(),
            ActionLanguage::PickKnife => "Pick the knife".into(),
            ActionLanguage::CutWithKnife => "Cut sth with knife".into(),
            ActionLanguage::PlaceRound => "Place the round object".into(),
            ActionLanguage::Done => "Done".into(),
        }
    }

    /// Every concrete sentence in the closed set (slots expanded).
    pub fn closed_set() -> Vec<ActionLanguage> {
        let mut set = vec![
            ActionLanguage::OpenDrawer,
            ActionLanguage::CloseDrawer,
            ActionLanguage::GraspAnObject,
            ActionLanguage::GraspRound,
            ActionLanguage::GraspNearDrawer,
            ActionLanguage::PutIntoBin,
            ActionLanguage::PutRoundInBin,
            ActionLanguage::PickKnife,
            ActionLanguage::CutWithKnife,
            ActionLanguage::PlaceRound,
            ActionLanguage::Done,
        ];
        for c in ALL_CATEGORIES {
            set.push(ActionLanguage::GraspThe(c));
            set.push(ActionLanguage::PutIntoDrawer(c));
        }
        set
    }

    /// Exact-match snap of decoded text onto the closed set.
    pub fn parse(text: &str) -> Option<ActionLanguage> {
        Self::closed_set().into_iter().find(|al| al.text() == text)
    }

    /// "Done" is a planner terminal, not a motor skill.
    pub fn is_terminal(&self) -> bool {
        matches!(self, ActionLanguage::Done)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskFamily {
    ShortHorizon,
    LongHorizon,
    Hybrid,
}

impl TaskFamily {
    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::ShortHorizon => "short-horizon",
            TaskFamily::LongHorizon => "long-horizon",
            TaskFamily::Hybrid => "hybrid",
        }
    }
}

/// The 17 language-conditioned tasks: 10 short-horizon, 4 long-horizon,
/// 3 hybrid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskId {
    // short-horizon
    OpenDrawer,
    CloseDrawer,
    GraspObject,
    GraspRound,
    GraspNearDrawer,
    PickKnife,
    CutWithKnife,
    PlaceIntoBin,
    PlaceIntoDrawer,
    PlaceRound,
    // long-horizon
    PutIntoDrawer,
    CleanTable,
    PickAllRound,
    CutFindKnife,
    // hybrid
    CleanAndCut,
    PlaceAndClean,
    CloseAndGrasp,
}

pub const ALL_TASKS: [TaskId; 17] = [
    TaskId::OpenDrawer,
    TaskId::CloseDrawer,
    TaskId::GraspObject,
    TaskId::GraspRound,
    TaskId::GraspNearDrawer,
    TaskId::PickKnife,
    TaskId::CutWithKnife,
    TaskId::PlaceIntoBin,
    TaskId::PlaceIntoDrawer,
    TaskId::PlaceRound,
    TaskId::PutIntoDrawer,
    TaskId::CleanTable,
    TaskId::PickAllRound,
    TaskId::CutFindKnife,
    TaskId::CleanAndCut,
    TaskId::PlaceAndClean,
    TaskId::CloseAndGrasp,
];

impl TaskId {
    pub fn family(self) -> TaskFamily {
        use TaskId::*;
        match self {
            OpenDrawer | CloseDrawer | GraspObject | GraspRound | GraspNearDrawer | PickKnife
            | CutWithKnife | PlaceIntoBin | PlaceIntoDrawer | PlaceRound => TaskFamily::ShortHorizon,
            PutIntoDrawer | CleanTable | PickAllRound | CutFindKnife => TaskFamily::LongHorizon,
            CleanAndCut | PlaceAndClean | CloseAndGrasp => TaskFamily::Hybrid,
        }
    }

    pub fn name(self) -> &'static str {
        use TaskId::*;
        match self {
            OpenDrawer => "open-drawer",
            CloseDrawer => "close-drawer",
            GraspObject => "grasp-object",
            GraspRound => "grasp-round",
            GraspNearDrawer => "grasp-near-drawer",
            PickKnife => "pick-knife",
            CutWithKnife => "cut-with-knife",
            PlaceIntoBin => "place-into-bin",
            PlaceIntoDrawer => "place-into-drawer",
            PlaceRound => "place-round",
            PutIntoDrawer => "put-into-drawer",
            CleanTable => "clean-table",
            PickAllRound => "pick-all-round",
            CutFindKnife => "cut-find-knife",
            CleanAndCut => "clean-and-cut",
            PlaceAndClean => "place-and-clean",
            CloseAndGrasp => "close-and-grasp",
        }
    }

    pub fn from_name(name: &str) -> Option<TaskId> {
        ALL_TASKS.iter().copied().find(|t| t.name() == name)
    }
}

/// A predicate target: either a single motor skill's postcondition or a
/// whole task's goal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Goal {
    Skill(ActionLanguage),
    Task { task: TaskId, target: Option<Category> },
}
