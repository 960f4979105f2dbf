//! Ground-truth success predicates for skills and tasks.

use super::{near_drawer, Place, WorldState};
use crate::domain::{ActionLanguage, Category, Goal, Shape, TaskId};
use crate::{Error, Result};

fn held_matches(w: &WorldState, f: impl Fn(&super::ObjectInstance) -> bool) -> bool {
    w.held_object().map(f).unwrap_or(false)
}

fn deposited(w: &WorldState, place: Place, f: impl Fn(&super::ObjectInstance) -> bool) -> bool {
    match w.last_deposit {
        Some((id, p)) if p == place => w.object(id).map(f).unwrap_or(false),
        _ => false,
    }
}

fn all_in_bin(w: &WorldState, f: impl Fn(&super::ObjectInstance) -> bool) -> bool {
    w.objects.iter().filter(|o| f(o)).all(|o| o.in_bin)
}

fn target_cat(goal: &str, target: Option<Category>) -> Result<Category> {
    target.ok_or_else(|| Error::Config(format!("goal {goal} requires a target category")))
}

/// True iff the skill postcondition or task goal holds in `w`.
pub fn check_predicate(w: &WorldState, goal: &Goal) -> Result<bool> {
    Ok(match goal {
        Goal::Skill(skill) => match skill {
            ActionLanguage::OpenDrawer => w.drawer_open,
            ActionLanguage::CloseDrawer => !w.drawer_open,
            ActionLanguage::GraspThe(c) => held_matches(w, |o| o.category == *c),
            ActionLanguage::GraspAnObject => w.held_object().is_some(),
            ActionLanguage::GraspRound => held_matches(w, |o| o.shape() == Shape::Round),
            ActionLanguage::GraspNearDrawer => held_matches(w, |o| near_drawer(o.cell)),
            ActionLanguage::PutIntoDrawer(c) => deposited(w, Place::Drawer, |o| o.category == *c),
            ActionLanguage::PutIntoBin => deposited(w, Place::Bin, |_| true),
            ActionLanguage::PutRoundInBin => deposited(w, Place::Bin, |o| o.shape() == Shape::Round),
            ActionLanguage::PickKnife => held_matches(w, |o| o.category == Category::Knife),
            ActionLanguage::CutWithKnife => w.objects.iter().any(|o| o.cut),
            ActionLanguage::PlaceRound => deposited(w, Place::Table, |o| o.shape() == Shape::Round),
            // "Done" asserts nothing by itself; the task goal is what counts.
            ActionLanguage::Done => true,
        },
        Goal::Task { task, target } => {
            let t = *target;
            match task {
                TaskId::OpenDrawer => w.drawer_open,
                TaskId::CloseDrawer => !w.drawer_open,
                TaskId::GraspObject => w.held_object().is_some(),
                TaskId::GraspRound => held_matches(w, |o| o.shape() == Shape::Round),
                TaskId::GraspNearDrawer => held_matches(w, |o| near_drawer(o.cell)),
                TaskId::PickKnife => held_matches(w, |o| o.category == Category::Knife),
                TaskId::CutWithKnife | TaskId::CutFindKnife => {
                    let c = target_cat(task.name(), t)?;
                    w.objects.iter().any(|o| o.category == c && o.cut)
                }
                TaskId::PlaceIntoBin => {
                    let c = target_cat(task.name(), t)?;
                    w.objects.iter().any(|o| o.category == c && o.in_bin)
                }
                TaskId::PlaceIntoDrawer => {
                    let c = target_cat(task.name(), t)?;
                    w.objects.iter().any(|o| o.category == c && o.in_drawer)
                }
                TaskId::PlaceRound => deposited(w, Place::Table, |o| o.shape() == Shape::Round),
                TaskId::PutIntoDrawer => {
                    let c = target_cat(task.name(), t)?;
                    !w.drawer_open && w.objects.iter().any(|o| o.category == c && o.in_drawer)
                }
                TaskId::CleanTable => all_in_bin(w, |o| o.category == Category::Trash),
                TaskId::PickAllRound => all_in_bin(w, |o| o.shape() == Shape::Round),
                TaskId::CleanAndCut => {
                    let c = target_cat(task.name(), t)?;
                    all_in_bin(w, |o| o.category == Category::Trash)
                        && w.objects.iter().any(|o| o.category == c && o.cut)
                }
                TaskId::PlaceAndClean => {
                    let c = target_cat(task.name(), t)?;
                    w.objects.iter().any(|o| o.category == c && o.in_drawer)
                        && all_in_bin(w, |o| o.category == Category::Trash)
                }
                TaskId::CloseAndGrasp => {
                    let c = target_cat(task.name(), t)?;
                    !w.drawer_open && held_matches(w, |o| o.category == c)
                }
            }
        }
    })
}
